//! Row-major 2-D arrays for single-channel maps, masks and label images.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Saliency or contour probabilities in `[0, 1]`.
pub type Map = Grid<f32>;
/// Binary mask.
pub type Mask = Grid<bool>;
/// Per-pixel label index; 0 is background.
pub type LabelMap = Grid<u16>;

impl<T: Clone> Grid<T> {
    pub fn new(height: usize, width: usize, fill: T) -> Self {
        Grid {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(
                "Grid::from_vec",
                format!("{} values for a {height}x{width} grid", data.len()),
            ));
        }
        Ok(Grid { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_dims<U>(&self, other: &Grid<U>, op: &'static str) -> Result<()> {
        if self.height != other.height {
            return Err(Error::ShapeMismatch {
                op,
                dim: "height",
                expected: self.height,
                actual: other.height,
            });
        }
        if self.width != other.width {
            return Err(Error::ShapeMismatch {
                op,
                dim: "width",
                expected: self.width,
                actual: other.width,
            });
        }
        Ok(())
    }
}

impl<T: Copy> Grid<T> {
    pub fn at(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a || b).count()
    }

    /// Intersection over union; two empty masks have IoU 0.
    pub fn iou(&self, other: &Mask) -> f64 {
        let u = self.union_count(other);
        if u == 0 {
            0.0
        } else {
            self.intersection_count(other) as f64 / u as f64
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Tight bounding box `(top, left, bottom, right)` with exclusive
    /// bottom/right, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let mut b = [usize::MAX, usize::MAX, 0, 0];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(y, x) {
                    b[0] = b[0].min(y);
                    b[1] = b[1].min(x);
                    b[2] = b[2].max(y + 1);
                    b[3] = b[3].max(x + 1);
                }
            }
        }
        (b[0] != usize::MAX).then_some(b)
    }

    pub fn to_map(&self) -> Map {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

impl Grid<f32> {
    /// One channel of one batch item.
    pub fn from_plane<T: Scalar>(t: &Tensor<T>, n: usize, c: usize) -> Map {
        let s = t.shape();
        Grid {
            height: s.h,
            width: s.w,
            data: t.plane(n, c).iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("sized")
    }
}
