use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 3;

/// A point of ℝᵈ, `1 ≤ d ≤ MAX_DIM`, stored inline so that path simulation
/// never allocates per step.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&coords.len()),
            "point dimension {} out of range",
            coords.len()
        );
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            coords: c,
            dim: coords.len() as u8,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Point {
            coords: [x, 0.0, 0.0],
            dim: 1,
        }
    }

    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Point {
            coords: [0.0; MAX_DIM],
            dim: dim as u8,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    /// First coordinate; the whole point in dimension one.
    #[inline]
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.coords().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(rhs.coords.iter()) {
            *a += b;
        }
        Point { coords: c, dim: self.dim }
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(rhs.coords.iter()) {
            *a -= b;
        }
        Point { coords: c, dim: self.dim }
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, s: f64) -> Point {
        let mut c = self.coords;
        for a in c.iter_mut() {
            *a *= s;
        }
        Point { coords: c, dim: self.dim }
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::scalar(x)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dim == 1 {
            return write!(f, "{}", self.coords[0]);
        }
        write!(f, "(")?;
        for (k, c) in self.coords().iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

// Serialized as a plain coordinate list.
impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "point must have 1..={MAX_DIM} coordinates, got {}",
                v.len()
            )));
        }
        Ok(Point::new(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_norms() {
        let a = Point::new(&[3.0, 4.0]);
        let b = Point::new(&[0.0, 1.0]);
        assert_eq!(a.norm(), 5.0);
        assert_eq!((a - b).coords(), &[3.0, 3.0]);
        assert_eq!((a + b * 2.0).coords(), &[3.0, 6.0]);
        assert!((a.dist(&b) - 18f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn serde_as_list() {
        let p = Point::new(&[1.5, -2.0]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.5,-2.0]");
        let q: Point = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<Point>("[]").is_err());
    }
}
