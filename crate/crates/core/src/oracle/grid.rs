use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::substream;

pub const MAX_DIMS: usize = 3;
pub const MAX_RESOLUTION: usize = 512;

/// Normalized cell probabilities over an axis-aligned box, row-major with the
/// last axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
    /// File name of the little-endian `f64` cell array, next to the header.
    values: String,
}

fn check_domain(lower: &[f64], upper: &[f64], resolution: &[usize]) -> Result<()> {
    let dims = resolution.len();
    if dims == 0 || dims > MAX_DIMS {
        return Err(Error::invalid("grid", format!("1 to {MAX_DIMS} dimensions supported, got {dims}")));
    }
    if lower.len() != dims || upper.len() != dims {
        return Err(Error::invalid("grid", "bounds and resolution disagree on dimension"));
    }
    for i in 0..dims {
        if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
            return Err(Error::invalid("grid", format!("axis {i} has empty or non-finite bounds")));
        }
        if resolution[i] == 0 || resolution[i] > MAX_RESOLUTION {
            return Err(Error::invalid(
                "grid",
                format!("axis {i} resolution must be in 1..={MAX_RESOLUTION}, got {}", resolution[i]),
            ));
        }
    }
    Ok(())
}

impl GridDensity {
    /// Normalize nonnegative cell weights into a density.
    pub fn from_weights(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>, mut values: Vec<f64>) -> Result<Self> {
        check_domain(&lower, &upper, &resolution)?;
        if values.len() != resolution.iter().product::<usize>() {
            return Err(Error::invalid("grid", "cell count does not match the resolution"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("grid", "cell weights must be finite and nonnegative"));
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateTarget);
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            lower,
            upper,
            resolution,
            values,
        })
    }

    pub fn dims(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.resolution[axis] as f64
    }

    fn unravel(&self, mut flat: usize) -> [usize; MAX_DIMS] {
        let mut idx = [0; MAX_DIMS];
        for axis in (0..self.dims()).rev() {
            idx[axis] = flat % self.resolution[axis];
            flat /= self.resolution[axis];
        }
        idx
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let idx = self.unravel(flat);
        (0..self.dims())
            .map(|a| self.lower[a] + (idx[a] as f64 + 0.5) * self.cell_width(a))
            .collect()
    }

    /// Flat index of the cell containing `x`; `None` outside the domain. The
    /// upper boundary belongs to the last cell.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dims() {
            return None;
        }
        let mut flat = 0;
        for (a, &xa) in x.iter().enumerate() {
            if !(xa >= self.lower[a] && xa <= self.upper[a]) {
                return None;
            }
            let i = (((xa - self.lower[a]) / self.cell_width(a)) as usize).min(self.resolution[a] - 1);
            flat = flat * self.resolution[a] + i;
        }
        Some(flat)
    }

    /// Write `<stem>.toml` (domain and resolution) and `<stem>.bin` (cell
    /// values, little-endian `f64`). Returns the header path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let bin_name = format!("{stem}.bin");
        let header = GridHeader {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            resolution: self.resolution.clone(),
            values: bin_name.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Serialize(e.to_string()))?;
        let header_path = dir.join(format!("{stem}.toml"));
        fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let bin_path = dir.join(bin_name);
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
        Ok(header_path)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(header_path)?;
        let header: GridHeader = crate::error::parse_toml(&text, &header_path.display().to_string())?;
        let bin_path = header_path.parent().unwrap_or(Path::new(".")).join(&header.values);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid("grid", "value file length is not a multiple of 8"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        check_domain(&header.lower, &header.upper, &header.resolution)?;
        if values.len() != header.resolution.iter().product::<usize>() {
            return Err(Error::invalid("grid", "cell count does not match the resolution"));
        }
        let total: f64 = values.iter().sum();
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("grid", "stored values are not a normalized density"));
        }
        Ok(Self {
            lower: header.lower,
            upper: header.upper,
            resolution: header.resolution,
            values,
        })
    }
}

/// Cell probabilities proportional to `score(x) · base(x)` at cell centers.
pub fn grid_target(
    score: impl Fn(&[f64]) -> f64,
    base: impl Fn(&[f64]) -> f64,
    lower: &[f64],
    upper: &[f64],
    resolution: &[usize],
) -> Result<GridDensity> {
    check_domain(lower, upper, resolution)?;
    let mut grid = GridDensity {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        resolution: resolution.to_vec(),
        values: Vec::new(),
    };
    let cells: usize = resolution.iter().product();
    let weights = (0..cells)
        .map(|c| {
            let x = grid.cell_center(c);
            score(&x) * base(&x)
        })
        .collect();
    grid = GridDensity::from_weights(grid.lower, grid.upper, grid.resolution, weights)?;
    Ok(grid)
}

/// `n` i.i.d. draws: a cell by inverting the cumulative distribution, then a
/// uniform point inside it.
pub fn rejection_sample(target: &GridDensity, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("rejection_sample", "n must be at least 1"));
    }
    let mut cdf = Vec::with_capacity(target.values.len());
    let mut acc = 0.0;
    for v in &target.values {
        acc += v;
        cdf.push(acc);
    }
    let last_nonzero = target.values.iter().rposition(|v| *v > 0.0).expect("normalized grid has mass");
    let mut rng = substream(seed, 0);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let mut cell = cdf.partition_point(|c| *c <= u).min(last_nonzero);
            while target.values[cell] == 0.0 {
                cell += 1;
            }
            let idx = target.unravel(cell);
            (0..target.dims())
                .map(|a| {
                    let w = target.cell_width(a);
                    target.lower[a] + (idx[a] as f64 + rng.random::<f64>()) * w
                })
                .collect()
        })
        .collect())
}

/// `½ Σ |empirical − target|` over cells, with samples outside the domain
/// counted as mass the target does not have.
pub fn tv_distance<S: AsRef<[f64]>>(samples: &[S], target: &GridDensity) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("tv_distance", "no samples"));
    }
    let mut counts = vec![0usize; target.values.len()];
    let mut outside = 0usize;
    for s in samples {
        match target.cell_of(s.as_ref()) {
            Some(c) => counts[c] += 1,
            None => outside += 1,
        }
    }
    let n = samples.len() as f64;
    let inside: f64 = counts
        .iter()
        .zip(&target.values)
        .map(|(&c, &p)| (c as f64 / n - p).abs())
        .sum();
    Ok(0.5 * (inside + outside as f64 / n))
}

impl GridDensity {
    /// Pool cells onto a coarser grid over the same domain. Each axis of
    /// `resolution` must divide the current one.
    pub fn coarsen(&self, resolution: &[usize]) -> Result<GridDensity> {
        check_domain(&self.lower, &self.upper, resolution)?;
        if resolution.len() != self.dims() || self.resolution.iter().zip(resolution).any(|(f, c)| f % c != 0) {
            return Err(Error::invalid("grid", "resolutions are not nested"));
        }
        let mut coarse = GridDensity {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            resolution: resolution.to_vec(),
            values: vec![0.0; resolution.iter().product()],
        };
        for (c, v) in self.values.iter().enumerate() {
            let cell = coarse.cell_of(&self.cell_center(c)).expect("centers lie inside");
            coarse.values[cell] += v;
        }
        Ok(coarse)
    }
}

/// Total variation between two grids on the same domain, the finer one
/// aggregated onto the coarser when the resolution is an integer multiple.
pub fn grid_tv(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.lower != b.lower || a.upper != b.upper || a.dims() != b.dims() {
        return Err(Error::invalid("grid_tv", "grids cover different domains"));
    }
    let (coarse, fine) = if a.values.len() <= b.values.len() { (a, b) } else { (b, a) };
    let pooled = fine.coarsen(&coarse.resolution)?;
    Ok(0.5 * pooled.values.iter().zip(&coarse.values).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::sigmoid;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn toy_1d(res: usize) -> GridDensity {
        grid_target(|x| sigmoid(4.0 - x[0] * x[0]), |_| 1.0, &[-4.0], &[4.0], &[res]).unwrap()
    }

    #[test]
    fn constant_score_gives_uniform_grid() {
        let g = grid_target(|_| 1.0, |_| 1.0, &[0.0, 0.0], &[1.0, 2.0], &[4, 5]).unwrap();
        assert!(g.values().iter().all(|v| (v - 0.05).abs() < 1e-15));
        assert!((g.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_toy_is_symmetric_and_peaked() {
        let g = toy_1d(400);
        let v = g.values();
        for i in 0..200 {
            assert!((v[i] - v[399 - i]).abs() < 1e-15);
        }
        let peak = v.iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, v[199]);
        assert!(v[199] > 10.0 * v[0]);
    }

    #[test]
    fn resolution_doubling_converges() {
        assert!(grid_tv(&toy_1d(256), &toy_1d(512)).unwrap() < 1e-3);
        let a = grid_target(|x| sigmoid(4.0 - x[0] * x[0] - x[1] * x[1]), |_| 1.0, &[-4.0; 2], &[4.0; 2], &[100, 100]).unwrap();
        let b = grid_target(|x| sigmoid(4.0 - x[0] * x[0] - x[1] * x[1]), |_| 1.0, &[-4.0; 2], &[4.0; 2], &[200, 200]).unwrap();
        assert!(grid_tv(&a, &b).unwrap() < 1e-3);
    }

    #[test]
    fn coarsening_preserves_mass_and_pools_cells() {
        let fine = grid_target(|x| 1.0 + x[0] + 2.0 * x[1], |_| 1.0, &[0.0, 0.0], &[1.0, 1.0], &[8, 6]).unwrap();
        let coarse = fine.coarsen(&[2, 3]).unwrap();
        assert!((coarse.total() - 1.0).abs() < 1e-12);
        let corner: f64 = (0..4).flat_map(|i| (0..2).map(move |j| i * 6 + j)).map(|c| fine.values()[c]).sum();
        assert!((coarse.values()[0] - corner).abs() < 1e-15);
        assert_eq!(fine.coarsen(&[8, 6]).unwrap(), fine);
        assert!(fine.coarsen(&[3, 3]).is_err());
    }

    #[test]
    fn degenerate_and_invalid_domains() {
        assert!(matches!(
            grid_target(|_| 0.0, |_| 1.0, &[0.0], &[1.0], &[10]),
            Err(Error::DegenerateTarget)
        ));
        assert!(grid_target(|_| 1.0, |_| 1.0, &[0.0; 4], &[1.0; 4], &[2; 4]).is_err());
        assert!(grid_target(|_| 1.0, |_| 1.0, &[0.0], &[1.0], &[513]).is_err());
        assert!(grid_target(|_| 1.0, |_| 1.0, &[1.0], &[1.0], &[5]).is_err());
    }

    #[test]
    fn uniform_sampling_passes_chi_squared() {
        let g = grid_target(|_| 1.0, |_| 1.0, &[-1.0, -1.0], &[1.0, 1.0], &[5, 5]).unwrap();
        let samples = rejection_sample(&g, 100_000, 8).unwrap();
        let mut counts = [0usize; 25];
        for s in &samples {
            counts[g.cell_of(s).unwrap()] += 1;
        }
        let e = 4000.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(24.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat} p {p}");
    }

    #[test]
    fn point_mass_samples_stay_in_the_cell() {
        let mut w = vec![0.0; 16];
        w[9] = 3.0;
        let g = GridDensity::from_weights(vec![0.0, 0.0], vec![4.0, 4.0], vec![4, 4], w).unwrap();
        let s = rejection_sample(&g, 1000, 1).unwrap();
        assert!(s.iter().all(|x| g.cell_of(x) == Some(9)));
        assert_eq!(s, rejection_sample(&g, 1000, 1).unwrap());
    }

    #[test]
    fn tv_examples() {
        let g = grid_target(|_| 1.0, |_| 1.0, &[0.0], &[4.0], &[4]).unwrap();
        let exact: Vec<[f64; 1]> = vec![[0.5], [1.5], [2.5], [3.5]];
        assert_eq!(tv_distance(&exact, &g).unwrap(), 0.0);
        let outside: Vec<[f64; 1]> = vec![[5.0]; 10];
        assert_eq!(tv_distance(&outside, &g).unwrap(), 1.0);
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        let corner = GridDensity::from_weights(vec![0.0], vec![4.0], vec![4], w).unwrap();
        let far: Vec<[f64; 1]> = vec![[3.9]; 10];
        assert_eq!(tv_distance(&far, &corner).unwrap(), 1.0);
    }

    #[test]
    fn self_samples_are_close_and_tighten_with_n() {
        let g = grid_target(|x| sigmoid(4.0 - x[0] * x[0] - x[1] * x[1]), |_| 1.0, &[-4.0; 2], &[4.0; 2], &[20, 20]).unwrap();
        let tv: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&n| tv_distance(&rejection_sample(&g, n, 21).unwrap(), &g).unwrap())
            .collect();
        assert!(tv[1] < 0.08, "{tv:?}");
        assert!(tv[0] > tv[1] && tv[1] > tv[2], "{tv:?}");
        // Roughly n^(-1/2): each tenfold increase shrinks TV by about sqrt(10).
        assert!(tv[0] / tv[2] > 5.0, "{tv:?}");
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = toy_1d(64);
        let header = g.save(dir.path(), "toy").unwrap();
        assert_eq!(GridDensity::load(&header).unwrap(), g);
        let text = std::fs::read_to_string(&header).unwrap();
        assert!(text.contains("resolution = [64]"));
        std::fs::write(&header, text.replace("values", "valuez")).unwrap();
        assert!(GridDensity::load(&header).is_err());
    }
}
