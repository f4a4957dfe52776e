use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::baselines::{mean_fill, nn_fill};
use super::metrics::{psnr, psnr_masked, ssim};
use crate::blend::{overlay, poisson_blend, seam_energy};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::gan::{Discriminator, Generator};
use crate::inpaint::{invert_batch, InpaintConfig, InpaintJob, InpaintResult};
use crate::mask::{Mask, MaskFamily, MaskSpec};
use crate::rng::derive_seed;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OursBlend,
    OursOverlay,
    MeanFill,
    NnFill,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::OursBlend,
        Method::OursOverlay,
        Method::MeanFill,
        Method::NnFill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OursBlend => "ours_blend",
            Method::OursOverlay => "ours_overlay",
            Method::MeanFill => "mean_fill",
            Method::NnFill => "nn_fill",
        }
    }

    fn uses_model(self) -> bool {
        matches!(self, Method::OursBlend | Method::OursOverlay)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown method `{s}`; valid methods: ours_blend, ours_overlay, mean_fill, nn_fill"
            ))
        })
    }
}

/// Key of a report cell: `<method>/<mask family>`.
pub fn cell_key(method: Method, family: MaskFamily) -> String {
    format!("{}/{}", method.name(), family.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub mask_family: MaskFamily,
    /// Set when the cell could not be computed; the arrays are then empty.
    pub error: Option<String>,
    /// Full-image PSNR per test image.
    pub psnr: Vec<f64>,
    /// PSNR over the missing pixels only.
    pub psnr_hole: Vec<f64>,
    pub ssim: Vec<f64>,
    pub seam_energy: Vec<f64>,
    /// `D(G(ẑ))` per image; empty for the baselines.
    pub d_score: Vec<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_psnr_hole: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_seam_energy: Option<f64>,
    pub mean_d_score: Option<f64>,
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl CellReport {
    fn failed(method: Method, family: MaskFamily, error: String) -> Self {
        Self::new(method, family, Some(error), [vec![], vec![], vec![], vec![], vec![]])
    }

    fn new(method: Method, family: MaskFamily, error: Option<String>, cols: [Vec<f64>; 5]) -> Self {
        let [psnr, psnr_hole, ssim, seam_energy, d_score] = cols;
        Self {
            method,
            mask_family: family,
            error,
            mean_psnr: mean(&psnr),
            mean_psnr_hole: mean(&psnr_hole),
            mean_ssim: mean(&ssim),
            mean_seam_energy: mean(&seam_energy),
            mean_d_score: mean(&d_score),
            psnr,
            psnr_hole,
            ssim,
            seam_energy,
            d_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub test_images: usize,
    pub masks: Vec<MaskSpec>,
    pub methods: Vec<Method>,
    pub inpaint: InpaintConfig,
    pub cells: BTreeMap<String, CellReport>,
}

impl EvalReport {
    pub fn cell(&self, method: Method, family: MaskFamily) -> Option<&CellReport> {
        self.cells.get(&cell_key(method, family))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub masks: Vec<MaskSpec>,
    pub methods: Vec<Method>,
    pub inpaint: InpaintConfig,
    /// Master seed for mask placement and inversion restarts.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            masks: MaskFamily::ALL.iter().map(|f| f.default_spec()).collect(),
            methods: Method::ALL.to_vec(),
            inpaint: InpaintConfig::default(),
            seed: 0,
        }
    }
}

/// The report together with the artifacts behind it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Mask of every test image, per family.
    pub masks: BTreeMap<MaskFamily, Vec<Mask>>,
    /// Reconstructions per cell key (empty for failed cells).
    pub outputs: BTreeMap<String, Vec<Image>>,
    /// Inversion results per family (when a model-based method was run).
    pub inversions: BTreeMap<MaskFamily, Vec<InpaintResult>>,
}

pub fn mask_seed(seed: u64, family: MaskFamily, index: usize) -> u64 {
    derive_seed(seed, &format!("mask/{}/{index}", family.name()))
}

pub fn inpaint_seed(seed: u64, family: MaskFamily, index: usize) -> u64 {
    derive_seed(seed, &format!("inpaint/{}/{index}", family.name()))
}

fn score(real: &[Image], masks: &[Mask], outputs: &[Image]) -> Result<[Vec<f64>; 5]> {
    let mut cols: [Vec<f64>; 5] = Default::default();
    for ((r, m), o) in real.iter().zip(masks).zip(outputs) {
        cols[0].push(psnr(o, r)?);
        cols[1].push(psnr_masked(o, r, m)?);
        cols[2].push(ssim(o, r)?);
        cols[3].push(seam_energy(o, m)?);
    }
    Ok(cols)
}

/// Runs every method on every test image under every mask family.
///
/// `train` is the reference set for nearest-neighbour filling. Cells that
/// fail are recorded with their error rather than aborting the grid.
pub fn evaluate(
    test: &[Image],
    train: &[Image],
    gen: &Generator,
    disc: &Discriminator,
    options: &EvalOptions,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test image"));
    }
    if options.methods.is_empty() || options.masks.is_empty() {
        return Err(Error::invalid("evaluation needs at least one method and one mask family"));
    }
    options.inpaint.validate()?;
    let mut cells = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut all_masks = BTreeMap::new();
    let mut inversions = BTreeMap::new();
    for spec in &options.masks {
        let family = spec.family();
        let masks = test
            .iter()
            .enumerate()
            .map(|(i, im)| spec.generate(im.height(), im.width(), mask_seed(options.seed, family, i)))
            .collect::<Result<Vec<_>>>()?;
        let corrupted = test
            .iter()
            .zip(&masks)
            .map(|(im, m)| m.corrupt(im))
            .collect::<Result<Vec<_>>>()?;

        let mut inverted: std::result::Result<Vec<InpaintResult>, String> = Err(String::new());
        if options.methods.iter().any(|m| m.uses_model()) {
            let jobs: Vec<InpaintJob> = corrupted
                .iter()
                .zip(&masks)
                .enumerate()
                .map(|(i, (y, m))| InpaintJob {
                    corrupted: y,
                    mask: m,
                    seed: inpaint_seed(options.seed, family, i),
                })
                .collect();
            inverted = match invert_batch(&jobs, gen, disc, &options.inpaint) {
                Ok(rs) => rs.into_iter().collect::<Result<Vec<_>>>().map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
        }

        for &method in &options.methods {
            let key = cell_key(method, family);
            let produced: Result<(Vec<Image>, Vec<f64>)> = match method {
                Method::OursBlend | Method::OursOverlay => match &inverted {
                    Ok(rs) => {
                        let f = if method == Method::OursBlend { poisson_blend } else { overlay };
                        corrupted
                            .iter()
                            .zip(&masks)
                            .zip(rs)
                            .map(|((y, m), r)| f(y, m, &r.generated))
                            .collect::<Result<Vec<_>>>()
                            .map(|imgs| (imgs, rs.iter().map(|r| r.d_score).collect()))
                    }
                    Err(e) => Err(Error::invalid(format!("inversion failed: {e}"))),
                },
                Method::MeanFill => corrupted
                    .iter()
                    .zip(&masks)
                    .map(|(y, m)| mean_fill(y, m))
                    .collect::<Result<Vec<_>>>()
                    .map(|imgs| (imgs, vec![])),
                Method::NnFill => corrupted
                    .iter()
                    .zip(&masks)
                    .map(|(y, m)| nn_fill(y, m, train).map(|(im, _)| im))
                    .collect::<Result<Vec<_>>>()
                    .map(|imgs| (imgs, vec![])),
            };
            let cell = match produced.and_then(|(imgs, d)| {
                let mut cols = score(test, &masks, &imgs)?;
                cols[4] = d;
                Ok((imgs, cols))
            }) {
                Ok((imgs, cols)) => {
                    outputs.insert(key.clone(), imgs);
                    CellReport::new(method, family, None, cols)
                }
                Err(e) => {
                    outputs.insert(key.clone(), Vec::new());
                    CellReport::failed(method, family, e.to_string())
                }
            };
            cells.insert(key, cell);
        }
        if let Ok(rs) = inverted {
            inversions.insert(family, rs);
        }
        all_masks.insert(family, masks);
    }
    Ok(Evaluation {
        report: EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: options.seed,
            test_images: test.len(),
            masks: options.masks.clone(),
            methods: options.methods.clone(),
            inpaint: options.inpaint.clone(),
            cells,
        },
        masks: all_masks,
        outputs,
        inversions,
    })
}
