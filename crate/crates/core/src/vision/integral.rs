use std::ops::{Add, Sub};

use crate::vision::GrayFrame;

/// Summed-area table of size `(h+1) × (w+1)` with a zero first row and
/// column: `table[y][x]` is the sum of all pixels strictly above-left.
#[derive(Debug, Clone, PartialEq)]
pub struct SummedArea<T> {
    width: usize,
    height: usize,
    table: Vec<T>,
}

impl<T> SummedArea<T>
where
    T: Copy + Default + Add<Output = T> + Sub<Output = T>,
{
    pub fn from_values(width: usize, height: usize, values: impl IntoIterator<Item = T>) -> Self {
        let stride = width + 1;
        let mut table = vec![T::default(); stride * (height + 1)];
        let mut values = values.into_iter();
        for y in 0..height {
            let mut row = T::default();
            for x in 0..width {
                row = row + values.next().expect("values cover the frame");
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        SummedArea { width, height, table }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Entry `(y, x)` of the table, `0 ≤ y ≤ h`, `0 ≤ x ≤ w`.
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over the rectangle with top-left `(x, y)`; four lookups.
    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> T {
        (self.at(y + h, x + w) + self.at(y, x)) - (self.at(y, x + w) + self.at(y + h, x))
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.table.chunks(self.width + 1).map(<[T]>::to_vec).collect()
    }
}

/// Pixel sums of `g` in floating point.
pub fn integral_image(g: &GrayFrame) -> SummedArea<f64> {
    SummedArea::from_values(g.width(), g.height(), g.pixels().iter().map(|&p| p as f64))
}

/// Exact integer pixel and squared-pixel tables over 8-bit levels.
#[derive(Debug, Clone)]
pub struct LevelIntegrals {
    pub sum: SummedArea<u64>,
    pub squares: SummedArea<u64>,
}

impl LevelIntegrals {
    pub fn new(width: usize, height: usize, levels: &[u8]) -> Self {
        LevelIntegrals {
            sum: SummedArea::from_values(width, height, levels.iter().map(|&v| v as u64)),
            squares: SummedArea::from_values(width, height, levels.iter().map(|&v| (v as u64) * (v as u64))),
        }
    }

    pub fn from_frame(g: &GrayFrame) -> Self {
        Self::new(g.width(), g.height(), &g.to_levels())
    }
}
