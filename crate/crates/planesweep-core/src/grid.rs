//! Dense 2-D containers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major `width × height` map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::param(
                "data",
                alloc::format!("expected {} elements, got {}", width * height, data.len()),
            ));
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, what: &'static str, expected: (usize, usize)) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::dims(what, expected, self.dims()));
        }
        Ok(())
    }
}

impl Grid<f64> {
    /// 2×2 area-average downsampling; a trailing odd row/column is dropped.
    pub fn downsample2(&self) -> Grid<f64> {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        Grid::from_fn(w, h, |x, y| {
            let x0 = (2 * x).min(self.width - 1);
            let y0 = (2 * y).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            0.25 * (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1))
        })
    }

    pub fn mean(&self) -> f64 {
        let mut s = crate::math::CompensatedSum::default();
        for &v in &self.data {
            s.add(v);
        }
        s.value() / self.data.len() as f64
    }
}

/// Planar multi-channel intensity image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    planes: Vec<Grid<f64>>,
}

impl Image {
    /// Builds an image from channel planes; intensities are clamped to `[0, 1]`.
    pub fn from_planes(planes: Vec<Grid<f64>>) -> Result<Self> {
        let first = planes.first().ok_or(Error::Empty("image planes"))?;
        let dims = first.dims();
        for p in &planes {
            p.ensure_dims("image plane", dims)?;
        }
        let planes = planes.into_iter().map(|p| p.map(|&v| v.clamp(0.0, 1.0))).collect();
        Ok(Image {
            width: dims.0,
            height: dims.1,
            planes,
        })
    }

    pub fn gray(plane: Grid<f64>) -> Self {
        let (width, height) = plane.dims();
        Image {
            width,
            height,
            planes: vec![plane.map(|&v| v.clamp(0.0, 1.0))],
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            planes: vec![Grid::new(width, height, value.clamp(0.0, 1.0)); channels],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &Grid<f64> {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Grid<f64>] {
        &self.planes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        *self.planes[c].get(x, y)
    }

    /// Channel mean at a pixel.
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let s: f64 = self.planes.iter().map(|p| *p.get(x, y)).sum();
        s / self.planes.len() as f64
    }

    pub fn downsample2(&self) -> Image {
        let planes: Vec<Grid<f64>> = self.planes.iter().map(|p| p.downsample2()).collect();
        let (width, height) = planes[0].dims();
        Image { width, height, planes }
    }

    pub fn ensure_dims(&self, what: &'static str, expected: (usize, usize)) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::dims(what, expected, self.dims()));
        }
        Ok(())
    }
}
