//! Synthetic multi-label zero-shot benchmark. Class embeddings are seeded
//! unit Gaussians; every class gets a visual prototype that is a fixed
//! linear function of its embedding (one shared projection for seen and
//! unseen classes), so appearance is predictable from semantics and
//! zero-shot transfer is measurable by construction. Images are composed
//! by stamping prototypes into distinct grid cells over a mid-gray
//! background plus Gaussian pixel noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{ClassEmbeddingTable, LabelVector};
use crate::tensor::{io, Tensor};

const SALT_EMBED: u64 = 0x45_4d42;
const SALT_PROTO: u64 = 0x50_524f;
const SALT_COMPOSE: u64 = 0x43_4f4d;

/// The image is divided into a GRID×GRID cell lattice for stamping.
pub const GRID: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub num_seen: usize,
    pub num_unseen: usize,
    pub d_w: usize,
    pub image_size: usize,
    pub max_labels_per_image: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub noise_std: f32,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 7,
            num_seen: 40,
            num_unseen: 10,
            d_w: 16,
            image_size: 32,
            max_labels_per_image: 4,
            train_images: 2000,
            test_images: 400,
            noise_std: 0.05,
        }
    }
}

impl BenchmarkSpec {
    pub fn num_classes(&self) -> usize {
        self.num_seen + self.num_unseen
    }

    pub fn cell(&self) -> usize {
        self.image_size / GRID
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_seen < 2 {
            return Err(Error::Config("need at least 2 seen classes for ranking".into()));
        }
        if self.num_unseen == 0 {
            return Err(Error::Config("need at least 1 unseen class".into()));
        }
        if self.d_w < 4 {
            return Err(Error::Config(format!("d_w must be >= 4, got {}", self.d_w)));
        }
        if self.image_size == 0 || self.image_size % (2 * GRID) != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of {}, got {}",
                2 * GRID,
                self.image_size
            )));
        }
        if self.max_labels_per_image == 0 {
            return Err(Error::Config("max_labels_per_image must be >= 1".into()));
        }
        if self.max_labels_per_image > GRID * GRID {
            return Err(Error::Config(format!(
                "cannot place {} prototypes into {} grid cells",
                self.max_labels_per_image,
                GRID * GRID
            )));
        }
        if self.max_labels_per_image > self.num_seen {
            return Err(Error::Config(format!(
                "max_labels_per_image {} exceeds the {} seen classes",
                self.max_labels_per_image, self.num_seen
            )));
        }
        if self.train_images == 0 || self.test_images == 0 {
            return Err(Error::Config("train and test image counts must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: BenchmarkSpec,
    pub num_classes: usize,
    pub seen_ids: Vec<usize>,
    pub unseen_ids: Vec<usize>,
    pub files: ManifestFiles,
    /// crc32 (hex) of each data file's bytes.
    pub checksums: std::collections::BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub images: String,
    pub labels: String,
    pub embeddings: String,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        ManifestFiles {
            images: "images.gbet".into(),
            labels: "labels.gbet".into(),
            embeddings: "embeddings.gbet".into(),
        }
    }
}

/// Generated benchmark: train images first, then test images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Tensor,
    pub table: ClassEmbeddingTable,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn num_images(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.manifest.spec.train_images
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.manifest.spec.train_images..self.num_images()
    }

    /// Copy of image i as a 3×S×S tensor.
    pub fn image(&self, i: usize) -> Tensor {
        let s = self.image_size();
        let numel = 3 * s * s;
        let data = self.images.data()[i * numel..(i + 1) * numel].to_vec();
        Tensor::new(vec![3, s, s], data).expect("consistent image shape")
    }

    pub fn label_row(&self, i: usize) -> &[f32] {
        let c = self.num_classes();
        &self.labels.data()[i * c..(i + 1) * c]
    }

    /// Binary label vector over the seen classes, in table order.
    pub fn seen_label_vector(&self, i: usize) -> Result<LabelVector> {
        let row = self.label_row(i);
        let bits: Vec<f32> = self.table.seen().iter().map(|&c| row[c]).collect();
        LabelVector::from_f32(&bits)
    }

    /// Binary label vector over an arbitrary id list.
    pub fn label_vector_for(&self, i: usize, ids: &[usize]) -> Result<LabelVector> {
        let row = self.label_row(i);
        let bits: Vec<f32> = ids.iter().map(|&c| row[c]).collect();
        LabelVector::from_f32(&bits)
    }

    pub fn positives(&self, i: usize) -> Vec<usize> {
        self.label_row(i)
            .iter()
            .enumerate()
            .filter_map(|(c, &v)| (v == 1.0).then_some(c))
            .collect()
    }

    /// Combined content checksum of the serialized tensors.
    pub fn content_checksum(&self) -> String {
        let mut hasher = crc32fast::Hasher::new();
        for t in [&self.images, &self.labels, self.table.vectors()] {
            let mut bytes = Vec::new();
            io::write_tensor(&mut bytes, t).expect("in-memory write");
            hasher.update(&bytes);
        }
        format!("{:08x}", hasher.finalize())
    }
}

/// Seeded unit-norm Gaussian class embeddings, seen ids first.
pub fn gen_embeddings(spec: &BenchmarkSpec) -> Result<ClassEmbeddingTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_EMBED);
    let num = spec.num_classes();
    let mut data = Vec::with_capacity(num * spec.d_w);
    for _ in 0..num {
        let mut row: Vec<f32> = (0..spec.d_w)
            .map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng))
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        for v in &mut row {
            *v /= norm;
        }
        data.extend_from_slice(&row);
    }
    ClassEmbeddingTable::new(
        Tensor::new(vec![num, spec.d_w], data)?,
        (0..spec.num_seen).collect(),
        (spec.num_seen..num).collect(),
    )
}

/// Fixed random projection from embedding space to prototype pixels,
/// shared by every class.
pub struct PrototypeProjection {
    /// (3·p·p)×d_w entries.
    matrix: Vec<f32>,
    pixels: usize,
    d_w: usize,
}

impl PrototypeProjection {
    pub fn from_spec(spec: &BenchmarkSpec) -> Self {
        let p = spec.cell();
        let pixels = 3 * p * p;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_PROTO);
        let matrix: Vec<f32> = (0..pixels * spec.d_w)
            .map(|_| 0.25 * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng))
            .collect();
        PrototypeProjection {
            matrix,
            pixels,
            d_w: spec.d_w,
        }
    }
}

/// prototype = clamp01(P · embedding + 0.5), reshaped to 3×p×p.
pub fn class_prototype(embedding: &[f32], proj: &PrototypeProjection, spec: &BenchmarkSpec) -> Tensor {
    debug_assert_eq!(embedding.len(), proj.d_w);
    let p = spec.cell();
    let data: Vec<f32> = (0..proj.pixels)
        .map(|i| {
            let row = &proj.matrix[i * proj.d_w..(i + 1) * proj.d_w];
            let dot: f32 = row.iter().zip(embedding).map(|(a, b)| a * b).sum();
            (dot + 0.5).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(vec![3, p, p], data).expect("prototype shape")
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: &[usize], count: usize) -> Vec<usize> {
    debug_assert!(count <= pool.len());
    let mut remaining = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let at = rng.random_range(0..remaining.len());
        out.push(remaining.swap_remove(at));
    }
    out
}

/// Generate the full benchmark deterministically from its spec.
pub fn gen_dataset(spec: &BenchmarkSpec) -> Result<Dataset> {
    spec.validate()?;
    let table = gen_embeddings(spec)?;
    let proj = PrototypeProjection::from_spec(spec);
    let prototypes: Vec<Tensor> = (0..spec.num_classes())
        .map(|c| {
            let d_w = spec.d_w;
            let row = &table.vectors().data()[c * d_w..(c + 1) * d_w];
            class_prototype(row, &proj, spec)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_COMPOSE);
    let s = spec.image_size;
    let cell = spec.cell();
    let total = spec.train_images + spec.test_images;
    let num_classes = spec.num_classes();
    let mut images = vec![0.5f32; total * 3 * s * s];
    let mut labels = vec![0.0f32; total * num_classes];
    let cells: Vec<usize> = (0..GRID * GRID).collect();
    let all_ids: Vec<usize> = (0..num_classes).collect();
    let seen_ids: Vec<usize> = table.seen().to_vec();
    let unseen_ids: Vec<usize> = table.unseen().to_vec();

    for i in 0..total {
        let is_test = i >= spec.train_images;
        let count = rng.random_range(1..=spec.max_labels_per_image);
        let classes = if is_test {
            // at least one unseen positive, remainder from all classes
            let anchor = unseen_ids[rng.random_range(0..unseen_ids.len())];
            let mut rest_pool: Vec<usize> = all_ids.iter().copied().filter(|&c| c != anchor).collect();
            let mut chosen = vec![anchor];
            for _ in 1..count {
                let at = rng.random_range(0..rest_pool.len());
                chosen.push(rest_pool.swap_remove(at));
            }
            chosen
        } else {
            sample_distinct(&mut rng, &seen_ids, count)
        };
        let slots = sample_distinct(&mut rng, &cells, classes.len());
        let img = &mut images[i * 3 * s * s..(i + 1) * 3 * s * s];
        for (&class, &slot) in classes.iter().zip(&slots) {
            labels[i * num_classes + class] = 1.0;
            let (ci, cj) = (slot / GRID, slot % GRID);
            let proto = prototypes[class].data();
            for ch in 0..3 {
                for pi in 0..cell {
                    for pj in 0..cell {
                        let dst = ch * s * s + (ci * cell + pi) * s + (cj * cell + pj);
                        img[dst] = proto[ch * cell * cell + pi * cell + pj];
                    }
                }
            }
        }
        if spec.noise_std > 0.0 {
            for v in img.iter_mut() {
                let noise: f32 =
                    <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng);
                *v = (*v + spec.noise_std * noise).clamp(0.0, 1.0);
            }
        }
    }

    let manifest = Manifest {
        spec: spec.clone(),
        num_classes,
        seen_ids,
        unseen_ids,
        files: ManifestFiles::default(),
        checksums: Default::default(),
    };
    Ok(Dataset {
        images: Tensor::new(vec![total, 3, s, s], images)?,
        labels: Tensor::new(vec![total, num_classes], labels)?,
        table,
        manifest,
    })
}

fn crc_hex(bytes: &[u8]) -> String {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(bytes);
    format!("{:08x}", hasher.finalize())
}

/// Write `manifest.json`, `images.gbet`, `labels.gbet`, `embeddings.gbet`.
pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let files = ManifestFiles::default();
    let mut checksums = std::collections::BTreeMap::new();
    for (name, tensor) in [
        (&files.images, &d.images),
        (&files.labels, &d.labels),
        (&files.embeddings, d.table.vectors()),
    ] {
        let mut bytes = Vec::new();
        io::write_tensor(&mut bytes, tensor)?;
        checksums.insert(name.clone(), crc_hex(&bytes));
        std::fs::write(dir.join(name), bytes)?;
    }
    let manifest = Manifest {
        files,
        checksums,
        ..d.manifest.clone()
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Read a dataset directory back, verifying checksums and blob structure.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let raw = std::fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|source| Error::Json {
        path: manifest_path.display().to_string(),
        source,
    })?;

    let read_checked = |name: &str| -> Result<Tensor> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path)?;
        let want = manifest.checksums.get(name).ok_or_else(|| Error::CorruptFile {
            path: path.display().to_string(),
            reason: "no checksum recorded in manifest".into(),
        })?;
        let got = crc_hex(&bytes);
        if &got != want {
            return Err(Error::CorruptFile {
                path: path.display().to_string(),
                reason: format!("checksum mismatch: manifest {want}, file {got}"),
            });
        }
        io::read_tensor(&mut bytes.as_slice(), &path.display().to_string())
    };

    let images = read_checked(&manifest.files.images.clone())?;
    let labels = read_checked(&manifest.files.labels.clone())?;
    let embeddings = read_checked(&manifest.files.embeddings.clone())?;
    let table = ClassEmbeddingTable::new(
        embeddings,
        manifest.seen_ids.clone(),
        manifest.unseen_ids.clone(),
    )?;
    Ok(Dataset {
        images,
        labels,
        table,
        manifest,
    })
}
