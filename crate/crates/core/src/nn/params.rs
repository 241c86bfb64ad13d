use ndarray::{ArrayView1, ArrayView2};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::arch::{LayerShape, Layout, NetArch};
use crate::error::{Error, Result};
use crate::rng;

/// Z-scoring applied to raw input rows before the first layer. Set points
/// share one set of statistics per point coordinate so the transform commutes
/// with point permutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub direct_mean: Vec<f64>,
    pub direct_std: Vec<f64>,
    pub point_mean: Vec<f64>,
    pub point_std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(arch: &NetArch) -> Self {
        let pd = arch.embedding.as_ref().map_or(0, |e| e.point_dim);
        Self {
            direct_mean: vec![0.0; arch.input_dim],
            direct_std: vec![1.0; arch.input_dim],
            point_mean: vec![0.0; pd],
            point_std: vec![1.0; pd],
        }
    }

    /// Column statistics over `rows`. Columns with (near) zero spread keep unit scale.
    pub fn fit(arch: &NetArch, rows: ArrayView2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Empty("standardizer rows"));
        }
        arch.set_size(rows.ncols())?;
        let d = arch.input_dim;
        let mut acc_direct = vec![Moments::default(); d];
        let pd = arch.embedding.as_ref().map_or(0, |e| e.point_dim);
        let mut acc_point = vec![Moments::default(); pd];
        for row in rows.rows() {
            let row = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
            for (m, v) in acc_direct.iter_mut().zip(&row[..d]) {
                m.push(*v);
            }
            if pd > 0 {
                for point in row[d..].chunks(pd) {
                    for (m, v) in acc_point.iter_mut().zip(point) {
                        m.push(*v);
                    }
                }
            }
        }
        let split = |acc: &[Moments]| -> (Vec<f64>, Vec<f64>) {
            acc.iter().map(|m| (m.mean, m.std_or_one())).unzip()
        };
        let (direct_mean, direct_std) = split(&acc_direct);
        let (point_mean, point_std) = split(&acc_point);
        Ok(Self {
            direct_mean,
            direct_std,
            point_mean,
            point_std,
        })
    }

    #[inline]
    pub fn direct(&self, col: usize, v: f64) -> f64 {
        (v - self.direct_mean[col]) / self.direct_std[col]
    }

    #[inline]
    pub fn point(&self, coord: usize, v: f64) -> f64 {
        (v - self.point_mean[coord]) / self.point_std[coord]
    }

    fn consistent_with(&self, arch: &NetArch) -> bool {
        let pd = arch.embedding.as_ref().map_or(0, |e| e.point_dim);
        self.direct_mean.len() == arch.input_dim
            && self.direct_std.len() == arch.input_dim
            && self.point_mean.len() == pd
            && self.point_std.len() == pd
            && self.direct_std.iter().chain(&self.point_std).all(|s| *s > 0.0)
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    fn std_or_one(&self) -> f64 {
        let s = if self.n > 1.0 {
            (self.m2 / (self.n - 1.0)).sqrt()
        } else {
            0.0
        };
        if s > 1e-12 && s.is_finite() {
            s
        } else {
            1.0
        }
    }
}

/// Flat parameter vector φ plus the architecture and input transform needed
/// to evaluate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetParams")]
pub struct NetParams {
    pub arch: NetArch,
    #[serde(skip_serializing)]
    pub layout: Layout,
    pub standardizer: Standardizer,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetParams {
    arch: NetArch,
    standardizer: Standardizer,
    values: Vec<f64>,
}

impl TryFrom<RawNetParams> for NetParams {
    type Error = Error;

    fn try_from(raw: RawNetParams) -> Result<Self> {
        NetParams::from_parts(raw.arch, raw.standardizer, raw.values)
    }
}

impl NetParams {
    pub fn from_parts(arch: NetArch, standardizer: Standardizer, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        if values.len() != layout.n_params {
            return Err(Error::dims("parameter vector", layout.n_params, values.len()));
        }
        if !standardizer.consistent_with(&arch) {
            return Err(Error::InvalidArch(
                "standardizer does not match architecture".into(),
            ));
        }
        let p = Self {
            arch,
            layout,
            standardizer,
            values,
        };
        p.check_finite()?;
        Ok(p)
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(arch: &NetArch, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = rng::seeded(seed);
        let layers: Vec<LayerShape> = p.layout.all().copied().collect();
        for l in layers {
            let bound = (6.0 / l.cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::InvalidArch(e.to_string()))?;
            for w in &mut p.values[l.offset..l.bias_offset()] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn zeros(arch: &NetArch) -> Result<Self> {
        let layout = Layout::new(arch)?;
        Ok(Self {
            arch: arch.clone(),
            standardizer: Standardizer::identity(arch),
            values: vec![0.0; layout.n_params],
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, l: &LayerShape) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.rows, l.cols), &self.values[l.offset..l.bias_offset()])
            .expect("layer shape consistent with layout")
    }

    pub fn bias(&self, l: &LayerShape) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[l.bias_offset()..l.end()])
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::SetEmbedArch;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let arch = NetArch::residual(3);
        assert_eq!(NetParams::init(&arch, 11).unwrap(), NetParams::init(&arch, 11).unwrap());
        assert_ne!(NetParams::init(&arch, 11).unwrap(), NetParams::init(&arch, 12).unwrap());
    }

    #[test]
    fn init_biases_are_zero() {
        let p = NetParams::init(&NetArch::residual(2), 3).unwrap();
        for l in p.layout.all() {
            assert!(p.bias(l).iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn init_rejects_zero_hidden() {
        let mut arch = NetArch::residual(2);
        arch.hidden_dim = 0;
        assert!(NetParams::init(&arch, 0).is_err());
    }

    #[test]
    fn standardizer_pools_point_coordinates() {
        let arch = NetArch::residual(1).with_embedding(SetEmbedArch::new(1));
        let rows = array![[0.0, 1.0, 3.0], [2.0, 5.0, 7.0]];
        let s = Standardizer::fit(&arch, rows.view()).unwrap();
        assert_eq!(s.direct_mean, vec![1.0]);
        assert_eq!(s.point_mean, vec![4.0]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = NetParams::init(&NetArch::residual(2), 5).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: NetParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn deserialize_rejects_wrong_length() {
        let p = NetParams::init(&NetArch::mlp(1, 2, 1), 5).unwrap();
        let mut v = serde_json::to_value(&p).unwrap();
        v["values"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<NetParams>(v).is_err());
    }
}
