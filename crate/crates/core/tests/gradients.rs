mod common;

use common::GradReport;

fn check(name: &str, r: GradReport) {
    assert!(r.worst_err < 1e-4, "{name}: worst relative error {:e} at {}", r.worst_err, r.worst_var);
    assert!(r.kinks * 50 <= r.checked + r.kinks, "{name}: {} of {} coordinates on kinks", r.kinks, r.checked + r.kinks);
}

#[test]
fn feem_gradients() {
    check("feem", common::feem_gradcheck(50));
}

#[test]
fn saam_gradients() {
    check("saam", common::saam_gradcheck(51));
}

#[test]
fn cglrm_gradients() {
    check("cglrm", common::cglrm_gradcheck(52));
}

#[test]
fn loss_gradients() {
    check("structure", common::structure_loss_gradcheck(53));
    check("dice", common::dice_loss_gradcheck(54));
}

#[test]
fn backbone_gradients() {
    check("backbone", common::backbone_gradcheck(55));
}
