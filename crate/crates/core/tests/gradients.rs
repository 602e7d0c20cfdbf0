mod common;

use common::{worst_gradient_error, GRAD_LOSSES};

#[test]
fn every_loss_matches_central_differences() {
    for name in GRAD_LOSSES {
        let (err, params) = worst_gradient_error(name, 20);
        assert!(params <= 200, "{name}: {params} parameters");
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}
