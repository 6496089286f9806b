//! Exact Bell numbers via the Bell triangle.

use num_bigint::BigUint;

use crate::error::{Error, Result};

pub const MAX_BELL_N: usize = 512;

/// Exact count of set partitions of `n` elements, for `0 <= n <= 512`.
pub fn bell_number(n: usize) -> Result<BigUint> {
    if n > MAX_BELL_N {
        return Err(Error::OutOfRange(format!(
            "bell number supported up to n={MAX_BELL_N}, got {n}"
        )));
    }
    // Bell triangle: row[0] = last element of the previous row,
    // row[i] = row[i-1] + prev[i-1]; B(n) = first element of row n.
    let mut prev: Vec<BigUint> = vec![BigUint::from(1u32)];
    for _ in 0..n {
        let mut row = Vec::with_capacity(prev.len() + 1);
        row.push(prev.last().unwrap().clone());
        for i in 0..prev.len() {
            let next = &row[i] + &prev[i];
            row.push(next);
        }
        prev = row;
    }
    Ok(prev[0].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bell_numbers() {
        let expect = [1u64, 1, 2, 5, 15, 52, 203, 877, 4140];
        for (n, &e) in expect.iter().enumerate() {
            assert_eq!(bell_number(n).unwrap(), BigUint::from(e));
        }
    }

    #[test]
    fn bell_42_has_the_known_38_digit_value() {
        assert_eq!(
            bell_number(42).unwrap().to_string(),
            "35742549198872617291353508656626642567"
        );
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(bell_number(513).is_err());
        assert!(bell_number(512).is_ok());
    }
}
