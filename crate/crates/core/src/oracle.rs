//! Nearest-centroid reference classifier on raw pixels, and a class
//! separation statistic. Both check that a dataset is learnable without
//! involving the network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::{normalize_depth, DepthFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    width: usize,
    height: usize,
    centroids: Vec<Vec<f64>>,
}

fn pixels(frame: &DepthFrame) -> Result<Vec<f64>> {
    let f = normalize_depth(frame)?;
    Ok(f.as_normalized().expect("normalized").iter().map(|&v| v as f64).collect())
}

fn check_inputs(frames: &[DepthFrame], labels: &[usize], k: usize) -> Result<(usize, usize)> {
    if frames.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames for {} labels",
            frames.len(),
            labels.len()
        )));
    }
    let first = frames.first().ok_or(Error::EmptySplit("oracle"))?;
    let dims = (first.width(), first.height());
    if let Some(f) = frames.iter().find(|f| (f.width(), f.height()) != dims) {
        return Err(Error::DimensionMismatch(format!(
            "mixed frame sizes {}x{} and {}x{}",
            dims.0,
            dims.1,
            f.width(),
            f.height()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: l, classes: k });
    }
    for c in 0..k {
        if !labels.contains(&c) {
            return Err(Error::EmptyClass(c));
        }
    }
    Ok(dims)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl NearestCentroid {
    pub fn fit(frames: &[DepthFrame], labels: &[usize], k: usize) -> Result<Self> {
        let (width, height) = check_inputs(frames, labels, k)?;
        let mut centroids = vec![vec![0.0; width * height]; k];
        let mut counts = vec![0usize; k];
        for (f, &l) in frames.iter().zip(labels) {
            for (c, v) in centroids[l].iter_mut().zip(pixels(f)?) {
                *c += v;
            }
            counts[l] += 1;
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        Ok(NearestCentroid {
            width,
            height,
            centroids,
        })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Closest centroid in Euclidean distance; ties go to the lower class.
    pub fn predict(&self, frame: &DepthFrame) -> Result<usize> {
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "oracle fitted on {}x{}, got {}x{}",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        let x = pixels(frame)?;
        let mut best = (0, f64::INFINITY);
        for (c, mu) in self.centroids.iter().enumerate() {
            let d = sq_dist(&x, mu);
            if d < best.1 {
                best = (c, d);
            }
        }
        Ok(best.0)
    }

    pub fn accuracy(&self, frames: &[DepthFrame], labels: &[usize]) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::EmptySplit("oracle evaluation"));
        }
        let mut hits = 0usize;
        for (f, &l) in frames.iter().zip(labels) {
            hits += usize::from(self.predict(f)? == l);
        }
        Ok(hits as f64 / frames.len() as f64)
    }
}

/// Mean pairwise Euclidean distance between class centroids, divided by the
/// pooled within-class standard deviation per pixel.
pub fn separation_ratio(frames: &[DepthFrame], labels: &[usize], k: usize) -> Result<f64> {
    let model = NearestCentroid::fit(frames, labels, k)?;
    let mut ss = 0.0;
    for (f, &l) in frames.iter().zip(labels) {
        ss += sq_dist(&pixels(f)?, &model.centroids[l]);
    }
    let dof = (frames.len() * model.width * model.height) as f64;
    let within = libm::sqrt(ss / dof);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            total += libm::sqrt(sq_dist(&model.centroids[a], &model.centroids[b]));
            pairs += 1;
        }
    }
    let between = total / pairs as f64;
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(between / within)
}
