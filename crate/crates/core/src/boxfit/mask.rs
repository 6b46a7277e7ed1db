use std::collections::VecDeque;

use crate::geometry::Point;

/// Binary segmentation grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask { width, height, data }
    }

    /// Pixels whose centers lie inside `b`.
    pub fn from_box(b: &crate::geometry::RotatedBox, width: usize, height: usize) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            if let Some((lo, hi)) = b.row_span(y as f64) {
                let x0 = lo.ceil().max(0.0);
                let x1 = hi.floor().min(width as f64 - 1.0);
                if x1 < x0 {
                    continue;
                }
                for x in x0 as usize..=x1 as usize {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask data length");
        Mask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// `false` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn foreground_points(&self) -> Vec<Point> {
        self.foreground()
            .map(|(x, y)| Point::new(x as f64, y as f64))
            .collect()
    }

    /// `(x_min, y_min, x_max, y_max)` over foreground pixel indices.
    pub fn extents(&self) -> Option<(usize, usize, usize, usize)> {
        let mut it = self.foreground();
        let (x0, y0) = it.next()?;
        let init = (x0, y0, x0, y0);
        Some(it.fold(init, |(a, b, c, d), (x, y)| (a.min(x), b.min(y), c.max(x), d.max(y))))
    }

    pub fn centroid(&self) -> Option<Point> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .foreground()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x as f64, b + y as f64));
        Some(Point::new(sx / n as f64, sy / n as f64))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count()
    }

    /// Foreground pixels with at least one 4-neighbour that is background or
    /// outside the grid.
    pub fn outline(&self) -> Vec<(usize, usize)> {
        self.foreground()
            .filter(|&(x, y)| {
                let (x, y) = (x as isize, y as isize);
                !(self.get_signed(x - 1, y) && self.get_signed(x + 1, y) && self.get_signed(x, y - 1) && self.get_signed(x, y + 1))
            })
            .collect()
    }

    /// 8-connected components, returned as pixel lists in discovery order.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut seen = vec![false; self.data.len()];
        let mut comps = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
                comp.push((x as usize, y as usize));
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if self.get_signed(nx, ny) {
                            let j = ny as usize * self.width + nx as usize;
                            if !seen[j] {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
            comps.push(comp);
        }
        comps
    }

    /// Keep only the largest 8-connected component (first found on ties).
    pub fn largest_component(&self) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        let comps = self.components();
        if let Some(best) = comps.iter().reduce(|a, b| if b.len() > a.len() { b } else { a }) {
            for &(x, y) in best {
                out.set(x, y, true);
            }
        }
        out
    }

    /// Row-wise prefix counts: `p[y*(w+1) + x]` = foreground in row `y`, columns `< x`.
    pub fn row_prefix_counts(&self) -> Vec<u32> {
        let w1 = self.width + 1;
        let mut p = vec![0u32; w1 * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                p[y * w1 + x + 1] = p[y * w1 + x] + self.get(x, y) as u32;
            }
        }
        p
    }
}
