use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Min-max normalization to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let mut it = values.into_iter();
        let first = it.next().ok_or_else(|| Error::Usage("cannot fit a scaler on no values".into()))?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(MinMaxScaler { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// Maps `[min, max]` to `[0, 1]`; a degenerate range maps everything to 0.
    pub fn apply(&self, x: f64) -> f64 {
        let r = self.range();
        if r > 0.0 {
            (x - self.min) / r
        } else {
            0.0
        }
    }

    pub fn invert(&self, u: f64) -> f64 {
        u * self.range() + self.min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = MinMaxScaler::fit([0.0, 10.0]).unwrap();
        assert_eq!(s.apply(5.0), 0.5);
        let c = MinMaxScaler::fit([3.0, 3.0, 3.0]).unwrap();
        assert_eq!(c.apply(3.0), 0.0);
        assert_eq!(c.apply(-100.0), 0.0);
        assert!(MinMaxScaler::fit(std::iter::empty()).is_err());
    }

    proptest! {
        #[test]
        fn invert_undoes_apply(lo in -1e3f64..1e3, width in 1e-3f64..1e3, frac in 0.0f64..=1.0) {
            let s = MinMaxScaler::fit([lo, lo + width]).unwrap();
            let x = lo + frac * width;
            prop_assert!((s.invert(s.apply(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
