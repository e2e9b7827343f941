//! Synthetic co-observation worlds and feature stores.
//!
//! A [`ModelWorld`] stands in for a collection of reconstructed 3D models:
//! every image belongs to one model and observes a subset of that model's
//! points. Two images of the same model co-observe the intersection of
//! their point sets; images of different models share nothing.
//!
//! Images are kept sorted by `image_id`, so index order and id order agree.
//! Everything downstream (mining tie-breaks, code databases) relies on that.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{norm, Matrix, Rng};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainQuery,
    ValidationQuery,
    Database,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub point_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub model_id: String,
    pub observed_points: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    models: Vec<ModelRecord>,
    images: Vec<ImageRecord>,
    splits: BTreeMap<String, Split>,
}

/// Model membership, per-image observations and query/database splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct ModelWorld {
    models: Vec<ModelRecord>,
    images: Vec<ImageRecord>,
    splits: Vec<Split>,
    image_model: Vec<usize>,
    image_index: HashMap<String, usize>,
}

impl TryFrom<WorldFile> for ModelWorld {
    type Error = Error;

    fn try_from(f: WorldFile) -> Result<Self> {
        ModelWorld::new(f.models, f.images, f.splits)
    }
}

impl From<ModelWorld> for WorldFile {
    fn from(w: ModelWorld) -> Self {
        let splits = w
            .images
            .iter()
            .zip(&w.splits)
            .map(|(img, s)| (img.image_id.clone(), *s))
            .collect();
        WorldFile {
            models: w.models,
            images: w.images,
            splits,
        }
    }
}

impl ModelWorld {
    /// Validates and indexes a world. Point lists are sorted and images are
    /// reordered by id.
    pub fn new(
        mut models: Vec<ModelRecord>,
        mut images: Vec<ImageRecord>,
        splits: BTreeMap<String, Split>,
    ) -> Result<Self> {
        let mut model_index = HashMap::with_capacity(models.len());
        for (i, m) in models.iter_mut().enumerate() {
            if model_index.insert(m.model_id.clone(), i).is_some() {
                return Err(Error::World(format!("duplicate model id `{}`", m.model_id)));
            }
            m.point_ids.sort_unstable();
            m.point_ids.dedup();
        }
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));

        let mut image_index = HashMap::with_capacity(images.len());
        let mut image_model = Vec::with_capacity(images.len());
        let mut split_vec = Vec::with_capacity(images.len());
        for (i, img) in images.iter_mut().enumerate() {
            if image_index.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::World(format!(
                    "duplicate image id `{}`",
                    img.image_id
                )));
            }
            let &m = model_index.get(&img.model_id).ok_or_else(|| {
                Error::World(format!(
                    "image `{}` references unknown model `{}`",
                    img.image_id, img.model_id
                ))
            })?;
            img.observed_points.sort_unstable();
            img.observed_points.dedup();
            let universe = &models[m].point_ids;
            if let Some(p) = img
                .observed_points
                .iter()
                .find(|p| universe.binary_search(p).is_err())
            {
                return Err(Error::World(format!(
                    "image `{}` observes point {p} outside model `{}`",
                    img.image_id, img.model_id
                )));
            }
            let split = *splits
                .get(&img.image_id)
                .ok_or_else(|| Error::World(format!("image `{}` has no split", img.image_id)))?;
            image_model.push(m);
            split_vec.push(split);
        }
        if let Some(extra) = splits.keys().find(|k| !image_index.contains_key(*k)) {
            return Err(Error::World(format!("split for unknown image `{extra}`")));
        }
        Ok(Self {
            models,
            images,
            splits: split_vec,
            image_model,
            image_index,
        })
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn image_id(&self, i: usize) -> &str {
        &self.images[i].image_id
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    /// Index of the model that image `i` belongs to.
    pub fn model_of(&self, i: usize) -> usize {
        self.image_model[i]
    }

    pub fn index_of(&self, image_id: &str) -> Result<usize> {
        self.image_index
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::UnknownId(image_id.to_string()))
    }

    pub fn with_split(&self, split: Split) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Images usable for training pairs: everything except validation queries.
    pub fn training_images(&self) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.splits[i] != Split::ValidationQuery)
            .collect()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.images.iter().map(|i| i.image_id.clone()).collect()
    }

    /// Number of points co-observed by images `i` and `j` (by index).
    pub fn co_observed_at(&self, i: usize, j: usize) -> usize {
        if self.image_model[i] != self.image_model[j] {
            return 0;
        }
        intersection_size(
            &self.images[i].observed_points,
            &self.images[j].observed_points,
        )
    }

    pub fn co_observed(&self, i: &str, j: &str) -> Result<usize> {
        Ok(self.co_observed_at(self.index_of(i)?, self.index_of(j)?))
    }

    /// Same model and at least `tau` co-observed points.
    pub fn is_match(&self, i: usize, j: usize, tau: usize) -> bool {
        i != j && self.image_model[i] == self.image_model[j] && self.co_observed_at(i, j) >= tau
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// N×D feature matrix with one image id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    ids: Vec<String>,
    features: Matrix,
    normalized: bool,
}

impl FeatureStore {
    pub fn new(ids: Vec<String>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} ids for {} feature rows",
                ids.len(),
                features.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::World(format!("duplicate feature id `{dup}`")));
        }
        let normalized = (0..features.rows()).all(|r| (norm(features.row(r)) - 1.0).abs() <= 1e-6);
        Ok(Self {
            ids,
            features,
            normalized,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize(&mut self) -> Result<()> {
        for r in 0..self.features.rows() {
            let n = norm(self.features.row(r));
            if n == 0.0 {
                return Err(Error::Param(format!(
                    "feature row `{}` has zero norm",
                    self.ids[r]
                )));
            }
            self.features.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        self.normalized = true;
        Ok(())
    }

    /// True when row `i` holds the features of `world` image `i` for all `i`.
    pub fn is_aligned_with(&self, world: &ModelWorld) -> bool {
        self.ids.len() == world.num_images()
            && self
                .ids
                .iter()
                .enumerate()
                .all(|(i, id)| id == world.image_id(i))
    }

    /// Reorders rows to follow the world's image order.
    pub fn aligned_to(&self, world: &ModelWorld) -> Result<FeatureStore> {
        if self.is_aligned_with(world) {
            return Ok(self.clone());
        }
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = world
            .images()
            .iter()
            .map(|img| {
                index
                    .get(img.image_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(img.image_id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureStore {
            ids: world.image_ids(),
            features: self.features.select_rows(&rows),
            normalized: self.normalized,
        })
    }

    /// Encodes the binary feature file. Values are stored as `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = u32::try_from(self.len()).map_err(|_| Error::Param("too many rows".into()))?;
        let d = u32::try_from(self.dim()).map_err(|_| Error::Param("too many columns".into()))?;
        let mut out = Vec::with_capacity(12 + self.features.data().len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        for &v in self.features.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for id in &self.ids {
            let len = u32::try_from(id.len()).map_err(|_| Error::Param("id too long".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(FEATURE_MAGIC)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let count = n
            .checked_mul(d)
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(4, format!("dimension overflow: {n} x {d}")))?;
        if count * 4 > r.remaining() {
            return Err(Error::format(
                r.offset() as u64,
                format!(
                    "truncated payload: {n}x{d} features need {} bytes, {} available",
                    count * 4,
                    r.remaining()
                ),
            ));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::format(at as u64, "non-finite feature value"));
            }
            data.push(v as f64);
        }
        let mut ids = Vec::with_capacity(n);
        let mut seen = HashSet::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let id = r.string()?;
            if !seen.insert(id.clone()) {
                return Err(Error::format(at as u64, format!("duplicate id `{id}`")));
            }
            ids.push(id);
        }
        r.finish()?;
        FeatureStore::new(ids, Matrix::from_vec(n, d, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Reads a CSV with header `id,f0,...,f{D-1}` and L2-normalizes the rows.
    pub fn import_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::format(0, "csv header must start with `id`"));
        }
        let d = header.len() - 1;
        for (k, name) in header.iter().skip(1).enumerate() {
            if name != format!("f{k}") {
                return Err(Error::format(
                    0,
                    format!("csv column {} must be `f{k}`, got `{name}`", k + 1),
                ));
            }
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for record in reader.records() {
            let record = record?;
            let offset = record.position().map_or(0, |p| p.byte());
            if record.len() != d + 1 {
                return Err(Error::format(
                    offset,
                    format!("expected {} fields, got {}", d + 1, record.len()),
                ));
            }
            ids.push(record[0].to_string());
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(offset, format!("bad number `{field}`")))?;
                if !v.is_finite() {
                    return Err(Error::format(offset, format!("non-finite value `{field}`")));
                }
                data.push(v);
            }
        }
        let n = ids.len();
        let mut store = FeatureStore::new(ids, Matrix::from_vec(n, d, data)?)?;
        store.normalize()?;
        Ok(store)
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = fs::File::create(path)?;
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain((0..self.dim()).map(|k| format!("f{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (r, id) in self.ids.iter().enumerate() {
            let values: Vec<String> = self.features.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id},{}", values.join(","))?;
        }
        Ok(())
    }
}

/// Little-endian cursor that reports failures with byte offsets.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} available",
                    self.remaining()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, "u32")?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4, "f32")?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let b = self.take(len, "id string")?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(at as u64, "id is not UTF-8"))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

/// Parameters of the synthetic world generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldGenParams {
    pub num_models: usize,
    pub images_per_model: usize,
    pub points_per_model: usize,
    /// Fraction of a model's points each image observes.
    pub obs_fraction: f64,
    pub feature_dim: usize,
    /// Scale of the per-model Gaussian centroid.
    pub cluster_spread: f64,
    /// Per-image Gaussian noise around the centroid.
    pub noise_sigma: f64,
    /// Every training query is guaranteed a same-model candidate co-observing
    /// at least this many points.
    pub tau: usize,
    pub seed: u64,
}

impl Default for WorldGenParams {
    fn default() -> Self {
        Self {
            num_models: 20,
            images_per_model: 30,
            points_per_model: 100,
            obs_fraction: 0.5,
            feature_dim: 64,
            cluster_spread: 1.0,
            noise_sigma: 1.0,
            tau: 10,
            seed: 7,
        }
    }
}

impl WorldGenParams {
    pub fn observations_per_image(&self) -> usize {
        ((self.obs_fraction * self.points_per_model as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_models", self.num_models),
            ("images_per_model", self.images_per_model),
            ("points_per_model", self.points_per_model),
            ("feature_dim", self.feature_dim),
            ("tau", self.tau),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("{name} must be >= 1")));
        }
        if !(self.obs_fraction > 0.0 && self.obs_fraction <= 1.0) {
            return Err(Error::Param(format!(
                "obs_fraction must be in (0, 1], got {}",
                self.obs_fraction
            )));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread > 0.0) {
            return Err(Error::Param("cluster_spread must be finite and > 0".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Param("noise_sigma must be finite and >= 0".into()));
        }
        if self.images_per_model < 3 {
            return Err(Error::Split(format!(
                "images_per_model = {} leaves no database image after assigning a train and a validation query",
                self.images_per_model
            )));
        }
        if self.observations_per_image() < self.tau {
            return Err(Error::Param(format!(
                "images observe {} points, fewer than tau = {}",
                self.observations_per_image(),
                self.tau
            )));
        }
        Ok(())
    }
}

const MAX_OBSERVATION_RETRIES: usize = 1000;

/// Builds a world and its L2-normalized features.
///
/// Per model, image 0 is the training query, image 1 the validation query
/// and the rest form the database. Observation sets of a model are redrawn
/// until its training query has a database image co-observing `tau` points.
pub fn generate_world(p: &WorldGenParams) -> Result<(ModelWorld, FeatureStore)> {
    p.validate()?;
    let root = Rng::new(p.seed);
    let obs = p.observations_per_image();
    let d = p.feature_dim;

    let mut models = Vec::with_capacity(p.num_models);
    let mut images = Vec::with_capacity(p.num_models * p.images_per_model);
    let mut splits = BTreeMap::new();
    let mut ids = Vec::with_capacity(p.num_models * p.images_per_model);
    let mut feats = Vec::with_capacity(p.num_models * p.images_per_model * d);

    for m in 0..p.num_models {
        let model_id = format!("m{m:04}");
        let base = (m * p.points_per_model) as u32;
        let point_ids: Vec<u32> = (0..p.points_per_model as u32).map(|q| base + q).collect();

        let mut feature_rng = root.derive(2 * m as u64);
        let centroid: Vec<f64> = (0..d)
            .map(|_| p.cluster_spread * feature_rng.gaussian())
            .collect();

        let mut obs_rng = root.derive(2 * m as u64 + 1);
        let mut observations;
        let mut attempt = 0;
        loop {
            observations = (0..p.images_per_model)
                .map(|_| {
                    let mut sel: Vec<u32> = obs_rng
                        .sample_indices(p.points_per_model, obs)
                        .into_iter()
                        .map(|q| base + q as u32)
                        .collect();
                    sel.sort_unstable();
                    sel
                })
                .collect::<Vec<_>>();
            let query_ok = observations[2..]
                .iter()
                .any(|o| intersection_size(&observations[0], o) >= p.tau);
            if query_ok {
                break;
            }
            attempt += 1;
            if attempt >= MAX_OBSERVATION_RETRIES {
                return Err(Error::World(format!(
                    "model {model_id}: no observation draw gives the training query a match with tau = {}",
                    p.tau
                )));
            }
        }

        for (i, observed_points) in observations.into_iter().enumerate() {
            let image_id = format!("{model_id}_i{i:04}");
            let split = match i {
                0 => Split::TrainQuery,
                1 => Split::ValidationQuery,
                _ => Split::Database,
            };
            let mut row: Vec<f64> = centroid
                .iter()
                .map(|c| c + p.noise_sigma * feature_rng.gaussian())
                .collect();
            let n = norm(&row);
            row.iter_mut().for_each(|v| *v /= n);
            feats.extend(row);
            splits.insert(image_id.clone(), split);
            ids.push(image_id.clone());
            images.push(ImageRecord {
                image_id,
                model_id: model_id.clone(),
                observed_points,
            });
        }
        models.push(ModelRecord {
            model_id,
            point_ids,
        });
    }

    let world = ModelWorld::new(models, images, splits)?;
    let n = ids.len();
    let store = FeatureStore::new(ids, Matrix::from_vec(n, d, feats)?)?;
    Ok((world, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> WorldGenParams {
        WorldGenParams {
            num_models: 2,
            images_per_model: 3,
            points_per_model: 40,
            obs_fraction: 0.5,
            feature_dim: 5,
            cluster_spread: 1.0,
            noise_sigma: 0.3,
            tau: 3,
            seed: 1,
        }
    }

    fn hand_world() -> ModelWorld {
        let models = vec![
            ModelRecord {
                model_id: "a".into(),
                point_ids: vec![1, 2, 3, 4, 5],
            },
            ModelRecord {
                model_id: "b".into(),
                point_ids: vec![10, 11],
            },
        ];
        let images = vec![
            ImageRecord {
                image_id: "x".into(),
                model_id: "a".into(),
                observed_points: vec![1, 2, 3],
            },
            ImageRecord {
                image_id: "y".into(),
                model_id: "a".into(),
                observed_points: vec![5, 3, 2],
            },
            ImageRecord {
                image_id: "z".into(),
                model_id: "b".into(),
                observed_points: vec![10, 11],
            },
        ];
        let splits = [
            ("x", Split::TrainQuery),
            ("y", Split::Database),
            ("z", Split::ValidationQuery),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ModelWorld::new(models, images, splits).unwrap()
    }

    #[test]
    fn counts_and_membership() {
        let (world, store) = generate_world(&small_params()).unwrap();
        assert_eq!(world.num_images(), 6);
        assert_eq!(store.len(), 6);
        let per_model: Vec<usize> = (0..2)
            .map(|m| (0..6).filter(|&i| world.model_of(i) == m).count())
            .collect();
        assert_eq!(per_model, vec![3, 3]);
        assert!(store.is_normalized());
        assert!(store.is_aligned_with(&world));
        for i in 0..6 {
            assert_eq!(world.images()[i].observed_points.len(), 20);
        }
        assert_eq!(world.with_split(Split::TrainQuery).len(), 2);
        assert_eq!(world.with_split(Split::ValidationQuery).len(), 2);
        assert_eq!(world.with_split(Split::Database).len(), 2);
    }

    #[test]
    fn zero_noise_identical_within_model() {
        let p = WorldGenParams {
            noise_sigma: 0.0,
            ..small_params()
        };
        let (world, store) = generate_world(&p).unwrap();
        for i in 0..world.num_images() {
            for j in 0..world.num_images() {
                if world.model_of(i) == world.model_of(j) {
                    assert_eq!(store.features().row(i), store.features().row(j));
                }
            }
        }
    }

    #[test]
    fn too_few_images_is_split_error() {
        let p = WorldGenParams {
            images_per_model: 2,
            ..small_params()
        };
        assert!(matches!(generate_world(&p), Err(Error::Split(_))));
    }

    #[test]
    fn co_observation() {
        let w = hand_world();
        assert_eq!(w.co_observed("x", "y").unwrap(), 2);
        assert_eq!(w.co_observed("y", "x").unwrap(), 2);
        assert_eq!(w.co_observed("x", "x").unwrap(), 3);
        assert_eq!(w.co_observed("x", "z").unwrap(), 0);
        assert!(matches!(
            w.co_observed("x", "nope"),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn rejects_inconsistent_worlds() {
        let models = vec![ModelRecord {
            model_id: "a".into(),
            point_ids: vec![1],
        }];
        let images = vec![ImageRecord {
            image_id: "x".into(),
            model_id: "a".into(),
            observed_points: vec![2],
        }];
        let splits: BTreeMap<_, _> = [("x".to_string(), Split::Database)].into_iter().collect();
        assert!(ModelWorld::new(models.clone(), images.clone(), splits).is_err());
        let images = vec![ImageRecord {
            image_id: "x".into(),
            model_id: "a".into(),
            observed_points: vec![1],
        }];
        assert!(ModelWorld::new(models, images, BTreeMap::new()).is_err());
    }

    #[test]
    fn world_json_round_trip() {
        let (world, _) = generate_world(&small_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        world.save(&path).unwrap();
        assert_eq!(ModelWorld::load(&path).unwrap(), world);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"splits\""));
        assert!(text.contains("\"train_query\""));
    }

    #[test]
    fn feature_file_round_trip() {
        let (_, store) = generate_world(&small_params()).unwrap();
        let bytes = store.to_bytes().unwrap();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.ids(), store.ids());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (a, b) in back.features().data().iter().zip(store.features().data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn empty_store_round_trip() {
        let store = FeatureStore::new(vec![], Matrix::zeros(0, 4)).unwrap();
        let bytes = store.to_bytes().unwrap();
        assert_eq!(bytes.len(), 12);
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn feature_format_errors() {
        let (_, store) = generate_world(&small_params()).unwrap();
        let mut bytes = store.to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        match FeatureStore::from_bytes(&bad) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }

        match FeatureStore::from_bytes(&bytes[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }

        bytes[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            FeatureStore::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_import_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, "id,f0,f1\na,3,4\nb,0,-2\n").unwrap();
        let store = FeatureStore::import_csv(&path).unwrap();
        assert_eq!(store.ids(), &["a".to_string(), "b".to_string()]);
        assert!(store.is_normalized());
        assert!((store.features().get(0, 0) - 0.6).abs() < 1e-15);
        assert_eq!(store.features().row(1), &[0.0, -1.0]);

        fs::write(&path, "id,f0,f2\na,3,4\n").unwrap();
        assert!(FeatureStore::import_csv(&path).is_err());
    }

    #[test]
    fn align_reorders_rows() {
        let (world, store) = generate_world(&small_params()).unwrap();
        let mut rows: Vec<usize> = (0..store.len()).collect();
        rows.reverse();
        let ids: Vec<String> = rows.iter().map(|&r| store.ids()[r].clone()).collect();
        let shuffled = FeatureStore::new(ids, store.features().select_rows(&rows)).unwrap();
        assert!(!shuffled.is_aligned_with(&world));
        assert_eq!(shuffled.aligned_to(&world).unwrap(), store);
    }
}
