use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use super::format::{self, EmbeddingRecord};
use super::{FeatureProvider, ViewInput, ViewKey};
use crate::domain::{is_nonnegative, LayerRange, LayerStats};
use crate::{Error, Result};

/// Serves precomputed embeddings keyed by (scene, config rank, aug index).
pub struct EmbeddingProvider {
    n_classes: usize,
    n_layers: usize,
    feat_dim: usize,
    index: HashMap<ViewKey, usize>,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingProvider {
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (h, records) = format::read_mvpf(buf)?;
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.key, i).is_some() {
                return Err(Error::Format {
                    offset: (format::MVPF_HEADER_LEN + i * h.record_len()) as u64,
                    reason: format!("duplicate record key {:?}", r.key),
                });
            }
            if r.vars.iter().any(|v| !is_nonnegative(f64::from(*v)))
                || r.probs.iter().any(|p| !is_nonnegative(f64::from(*p)))
            {
                return Err(Error::Format {
                    offset: (format::MVPF_HEADER_LEN + i * h.record_len()) as u64,
                    reason: format!("record {:?} has negative variance or probability", r.key),
                });
            }
        }
        Ok(EmbeddingProvider {
            n_classes: h.n_classes as usize,
            n_layers: h.n_layers as usize,
            feat_dim: h.feat_dim as usize,
            index,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(Error::at_path(path))?;
        Self::from_bytes(&buf)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn record(&self, key: &ViewKey) -> Result<&EmbeddingRecord> {
        self.index
            .get(key)
            .map(|&i| &self.records[i])
            .ok_or(Error::MissingKey {
                scene_id: key.scene_id,
                config_rank: key.config_rank,
                aug_index: key.aug_index,
            })
    }
}

impl FeatureProvider for EmbeddingProvider {
    fn n_layers(&self) -> usize {
        self.n_layers
    }

    fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn consumes_pixels(&self) -> bool {
        false
    }

    fn predict(&self, view: &ViewInput<'_>) -> Result<Vec<f64>> {
        let r = self.record(&view.key)?;
        let p: Vec<f64> = r.probs.iter().map(|&x| x as f64).collect();
        let sum: f64 = p.iter().sum();
        if sum.is_nan() || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::NotNormalized { sum });
        }
        Ok(p)
    }

    fn layer_stats(&self, view: &ViewInput<'_>, layers: LayerRange) -> Result<Vec<LayerStats>> {
        layers.check_available(self.n_layers)?;
        let r = self.record(&view.key)?;
        let d = self.feat_dim;
        Ok(layers
            .iter()
            .map(|layer| {
                let span = (layer - 1) * d..layer * d;
                LayerStats {
                    layer,
                    mean: r.means[span.clone()].iter().map(|&x| x as f64).collect(),
                    var: r.vars[span].iter().map(|&x| x as f64).collect(),
                }
            })
            .collect())
    }
}

/// Wraps a provider and keeps the full encoding of every view it is asked
/// about, for export as an embedding file.
pub struct RecordingProvider<'a> {
    inner: &'a dyn FeatureProvider,
    seen: Mutex<BTreeMap<ViewKey, EmbeddingRecord>>,
}

impl<'a> RecordingProvider<'a> {
    pub fn new(inner: &'a dyn FeatureProvider) -> Self {
        RecordingProvider {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    fn record(&self, view: &ViewInput<'_>) -> Result<(Vec<LayerStats>, Vec<f64>)> {
        let (stats, probs) = self.inner.encode(view, self.inner.all_layers())?;
        let flat = |f: fn(&LayerStats) -> &Vec<f64>| {
            stats
                .iter()
                .flat_map(|l| f(l).iter().map(|&x| x as f32))
                .collect::<Vec<_>>()
        };
        let rec = EmbeddingRecord {
            key: view.key,
            means: flat(|l| &l.mean),
            vars: flat(|l| &l.var),
            probs: probs.iter().map(|&x| x as f32).collect(),
        };
        self.seen.lock().expect("poisoned").insert(view.key, rec);
        Ok((stats, probs))
    }

    /// Recorded views in key order.
    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.seen
            .into_inner()
            .expect("poisoned")
            .into_values()
            .collect()
    }

    pub fn write_to(self, path: &Path) -> Result<usize> {
        let (c, l, d) = (
            self.inner.n_classes() as u32,
            self.inner.n_layers() as u32,
            self.inner.feat_dim() as u32,
        );
        let records = self.into_records();
        let file = std::fs::File::create(path).map_err(Error::at_path(path))?;
        format::write_mvpf(std::io::BufWriter::new(file), c, l, d, &records)?;
        Ok(records.len())
    }
}

impl FeatureProvider for RecordingProvider<'_> {
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    fn feat_dim(&self) -> usize {
        self.inner.feat_dim()
    }

    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn predict(&self, view: &ViewInput<'_>) -> Result<Vec<f64>> {
        Ok(self.record(view)?.1)
    }

    fn layer_stats(&self, view: &ViewInput<'_>, layers: LayerRange) -> Result<Vec<LayerStats>> {
        layers.check_available(self.n_layers())?;
        let (stats, _) = self.record(view)?;
        Ok(stats
            .into_iter()
            .filter(|l| layers.iter().any(|x| x == l.layer))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Image;
    use crate::provider::{SyntheticProvider, SyntheticProviderModel};

    #[test]
    fn round_trip_through_recording() {
        let synth = SyntheticProvider::new(SyntheticProviderModel::default()).unwrap();
        let rec = RecordingProvider::new(&synth);
        let img = Image::new(4, 4, (0..16).map(|i| 0.1 + i as f64 / 40.0).collect()).unwrap();
        let mut sig = vec![0.0; 50];
        sig[4] = 1.0;
        let keys = [ViewKey::grid(1, 2, 0), ViewKey::ae(1, 0, true, 5)];
        let mut direct = Vec::new();
        for k in keys {
            let v = ViewInput {
                key: k,
                image: &img,
                signature: &sig,
            };
            direct.push(rec.encode(&v, synth.all_layers()).unwrap());
        }
        let mut buf = Vec::new();
        format::write_mvpf(&mut buf, 50, 6, 64, &rec.into_records()).unwrap();
        let loaded = EmbeddingProvider::from_bytes(&buf).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(!loaded.consumes_pixels());
        let empty = Image::empty();
        for (k, (stats, probs)) in keys.iter().zip(&direct) {
            let v = ViewInput {
                key: *k,
                image: &empty,
                signature: &[],
            };
            let (ls, ps) = loaded.encode(&v, loaded.all_layers()).unwrap();
            for (a, b) in ls.iter().zip(stats) {
                for (x, y) in a.mean.iter().zip(&b.mean) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
            assert_eq!(&ps, probs);
            assert_eq!(&ls, stats);
        }
        let missing = ViewInput {
            key: ViewKey::grid(9, 9, 9),
            image: &empty,
            signature: &[],
        };
        assert!(matches!(
            loaded.predict(&missing),
            Err(Error::MissingKey { .. })
        ));
        let over = LayerRange::first_n(7).unwrap();
        let v = ViewInput {
            key: keys[0],
            image: &empty,
            signature: &[],
        };
        assert!(matches!(
            loaded.layer_stats(&v, over),
            Err(Error::LayerBound { .. })
        ));
    }
}
