//! Backward-rule mutation hooks. A test can flip the sign of any single
//! operator's backward output and assert that the gradient-check suite
//! catches it, guarding the oracle suite against silent neutering.

use std::cell::Cell;

/// Operator kinds recorded on tape nodes; `Leaf` marks inputs/parameters.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    BatchNorm,
    Relu,
    Sigmoid,
    Add,
    Mul,
    MulScalarParam,
    Scale,
    Concat,
    SliceChannels,
    BroadcastChannels,
    UpsampleNearest,
    Sum,
    BceOhem,
    Dice,
}

/// Every mutable (non-leaf) operator kind, for exhaustive mutation sweeps.
pub const ALL_OPS: [OpKind; 16] = [
    OpKind::Conv2d,
    OpKind::ConvTranspose2d,
    OpKind::BatchNorm,
    OpKind::Relu,
    OpKind::Sigmoid,
    OpKind::Add,
    OpKind::Mul,
    OpKind::MulScalarParam,
    OpKind::Scale,
    OpKind::Concat,
    OpKind::SliceChannels,
    OpKind::BroadcastChannels,
    OpKind::UpsampleNearest,
    OpKind::Sum,
    OpKind::BceOhem,
    OpKind::Dice,
];

thread_local! {
    static FLIPPED: Cell<Option<OpKind>> = const { Cell::new(None) };
}

pub fn is_flipped(kind: OpKind) -> bool {
    FLIPPED.with(|c| c.get() == Some(kind))
}

/// Runs `f` with the backward rule of `kind` sign-flipped, restoring the
/// previous state afterwards (also on panic).
pub fn with_flipped_backward<R>(kind: OpKind, f: impl FnOnce() -> R) -> R {
    struct Guard(Option<OpKind>);
    impl Drop for Guard {
        fn drop(&mut self) {
            FLIPPED.with(|c| c.set(self.0));
        }
    }
    let _guard = Guard(FLIPPED.with(|c| c.replace(Some(kind))));
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_state_is_scoped_and_panic_safe() {
        assert!(!is_flipped(OpKind::Conv2d));
        with_flipped_backward(OpKind::Conv2d, || {
            assert!(is_flipped(OpKind::Conv2d));
            assert!(!is_flipped(OpKind::Relu));
        });
        assert!(!is_flipped(OpKind::Conv2d));
        let result = std::panic::catch_unwind(|| {
            with_flipped_backward(OpKind::Relu, || panic!("boom"));
        });
        assert!(result.is_err());
        assert!(!is_flipped(OpKind::Relu));
    }
}
