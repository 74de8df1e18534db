//! The six-subnetwork retrieval model.
//!
//! Two encoders map raw features into per-modality representation spaces,
//! two classifiers read class logits off those spaces, and two translators
//! carry vectors between them. Both spaces have the same width so that a
//! translated vector can be compared directly with a native one.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, ForwardCache, Layer, Linear, Mlp, MlpGrads, MlpSpec, Mode};
use crate::tensor::Matrix;

pub const MODEL_MAGIC: &[u8; 8] = b"DSTCMODL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subnet {
    EncoderX,
    EncoderY,
    ClassifierX,
    ClassifierY,
    TranslatorXY,
    TranslatorYX,
}

impl Subnet {
    pub const ALL: [Subnet; 6] = [
        Subnet::EncoderX,
        Subnet::EncoderY,
        Subnet::ClassifierX,
        Subnet::ClassifierY,
        Subnet::TranslatorXY,
        Subnet::TranslatorYX,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subnet::EncoderX => "E_x",
            Subnet::EncoderY => "E_y",
            Subnet::ClassifierX => "C_x",
            Subnet::ClassifierY => "C_y",
            Subnet::TranslatorXY => "T_xy",
            Subnet::TranslatorYX => "T_yx",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The same role in the other modality.
    pub fn mirror(self) -> Subnet {
        match self {
            Subnet::EncoderX => Subnet::EncoderY,
            Subnet::EncoderY => Subnet::EncoderX,
            Subnet::ClassifierX => Subnet::ClassifierY,
            Subnet::ClassifierY => Subnet::ClassifierX,
            Subnet::TranslatorXY => Subnet::TranslatorYX,
            Subnet::TranslatorYX => Subnet::TranslatorXY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Audioset,
    Wikipedia,
    Pascal,
    Custom,
}

impl PresetName {
    fn tag(self) -> u32 {
        match self {
            PresetName::Audioset => 0,
            PresetName::Wikipedia => 1,
            PresetName::Pascal => 2,
            PresetName::Custom => 3,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => PresetName::Audioset,
            1 => PresetName::Wikipedia,
            2 => PresetName::Pascal,
            3 => PresetName::Custom,
            _ => return None,
        })
    }
}

/// Per-subnetwork layer layouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchPreset {
    pub name: PresetName,
    pub encoder_x: MlpSpec,
    pub encoder_y: MlpSpec,
    pub classifier_x: MlpSpec,
    pub classifier_y: MlpSpec,
    pub translator_xy: MlpSpec,
    pub translator_yx: MlpSpec,
}

impl ArchPreset {
    /// Audio-video layout: encoders `d → (256 | 512) → 256`, linear
    /// classifiers on the 256-wide space, and a `256 → 128 → 64 → 128 → 256`
    /// hourglass translator in each direction.
    pub fn audioset(x_dim: usize, y_dim: usize, classes: usize) -> Self {
        let hourglass = MlpSpec::with_batchnorm(&[256, 128, 64, 128, 256]);
        Self {
            name: PresetName::Audioset,
            encoder_x: MlpSpec::with_batchnorm(&[x_dim, 256, 256]),
            encoder_y: MlpSpec::with_batchnorm(&[y_dim, 512, 256]),
            classifier_x: MlpSpec::plain(&[256, classes]),
            classifier_y: MlpSpec::plain(&[256, classes]),
            translator_xy: hourglass.clone(),
            translator_yx: hourglass,
        }
    }

    /// Image-text layout: encoders `d → 2048 → 1024`, linear classifiers and
    /// a `1024 → 512 → 1024` translator.
    pub fn image_text(name: PresetName, x_dim: usize, y_dim: usize, classes: usize) -> Self {
        let hourglass = MlpSpec::with_batchnorm(&[1024, 512, 1024]);
        Self {
            name,
            encoder_x: MlpSpec::with_batchnorm(&[x_dim, 2048, 1024]),
            encoder_y: MlpSpec::with_batchnorm(&[y_dim, 2048, 1024]),
            classifier_x: MlpSpec::plain(&[1024, classes]),
            classifier_y: MlpSpec::plain(&[1024, classes]),
            translator_xy: hourglass.clone(),
            translator_yx: hourglass,
        }
    }

    pub fn wikipedia(x_dim: usize, y_dim: usize, classes: usize) -> Self {
        Self::image_text(PresetName::Wikipedia, x_dim, y_dim, classes)
    }

    pub fn pascal(x_dim: usize, y_dim: usize, classes: usize) -> Self {
        Self::image_text(PresetName::Pascal, x_dim, y_dim, classes)
    }

    /// Custom layout of the same shape family: one hidden encoder layer,
    /// a linear classifier and a single-bottleneck hourglass translator.
    pub fn custom(x_dim: usize, y_dim: usize, classes: usize, hidden: usize, embed: usize, bottleneck: usize) -> Self {
        let hourglass = MlpSpec::with_batchnorm(&[embed, bottleneck, embed]);
        Self {
            name: PresetName::Custom,
            encoder_x: MlpSpec::with_batchnorm(&[x_dim, hidden, embed]),
            encoder_y: MlpSpec::with_batchnorm(&[y_dim, hidden, embed]),
            classifier_x: MlpSpec::plain(&[embed, classes]),
            classifier_y: MlpSpec::plain(&[embed, classes]),
            translator_xy: hourglass.clone(),
            translator_yx: hourglass,
        }
    }

    /// Desk-scale default used for synthetic data.
    pub fn compact(x_dim: usize, y_dim: usize, classes: usize) -> Self {
        Self::custom(x_dim, y_dim, classes, 128, 64, 32)
    }

    pub fn named(name: PresetName, x_dim: usize, y_dim: usize, classes: usize) -> Self {
        match name {
            PresetName::Audioset => Self::audioset(x_dim, y_dim, classes),
            PresetName::Wikipedia => Self::wikipedia(x_dim, y_dim, classes),
            PresetName::Pascal => Self::pascal(x_dim, y_dim, classes),
            PresetName::Custom => Self::compact(x_dim, y_dim, classes),
        }
    }

    pub fn spec(&self, subnet: Subnet) -> &MlpSpec {
        match subnet {
            Subnet::EncoderX => &self.encoder_x,
            Subnet::EncoderY => &self.encoder_y,
            Subnet::ClassifierX => &self.classifier_x,
            Subnet::ClassifierY => &self.classifier_y,
            Subnet::TranslatorXY => &self.translator_xy,
            Subnet::TranslatorYX => &self.translator_yx,
        }
    }

    /// Checks that the six layouts chain together and match the data.
    pub fn check(&self, classes: usize, x_dim: usize, y_dim: usize) -> Result<()> {
        for s in Subnet::ALL {
            self.spec(s)
                .validate()
                .map_err(|e| Error::Shape(format!("{}: {e}", s.name())))?;
        }
        check_layout(
            |s| (self.spec(s).input_dim(), self.spec(s).output_dim()),
            classes,
            Some((x_dim, y_dim)),
        )
    }
}

fn check_layout(io: impl Fn(Subnet) -> (usize, usize), classes: usize, data_dims: Option<(usize, usize)>) -> Result<()> {
    use Subnet::*;
    let (ex_in, ex_out) = io(EncoderX);
    let (ey_in, ey_out) = io(EncoderY);
    let (cx_in, cx_out) = io(ClassifierX);
    let (cy_in, cy_out) = io(ClassifierY);
    let (txy_in, txy_out) = io(TranslatorXY);
    let (tyx_in, tyx_out) = io(TranslatorYX);
    let mut problems = Vec::new();
    if let Some((d1, d2)) = data_dims {
        if ex_in != d1 {
            problems.push(format!("E_x takes {ex_in} features, data has {d1}"));
        }
        if ey_in != d2 {
            problems.push(format!("E_y takes {ey_in} features, data has {d2}"));
        }
    }
    if ex_out != ey_out {
        problems.push(format!("representation widths differ: E_x gives {ex_out}, E_y gives {ey_out}"));
    }
    for (name, dim) in [("C_x input", cx_in), ("T_xy input", txy_in), ("T_yx output", tyx_out)] {
        if dim != ex_out {
            problems.push(format!("{name} is {dim}, x-space is {ex_out}"));
        }
    }
    for (name, dim) in [("C_y input", cy_in), ("T_yx input", tyx_in), ("T_xy output", txy_out)] {
        if dim != ey_out {
            problems.push(format!("{name} is {dim}, y-space is {ey_out}"));
        }
    }
    for (name, dim) in [("C_x", cx_out), ("C_y", cy_out)] {
        if dim != classes {
            problems.push(format!("{name} emits {dim} logits for {classes} classes"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Shape(problems.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DstcModel {
    pub e_x: Mlp,
    pub e_y: Mlp,
    pub c_x: Mlp,
    pub c_y: Mlp,
    pub t_xy: Mlp,
    pub t_yx: Mlp,
    num_classes: usize,
    preset: PresetName,
}

/// Every activation the loss terms read, from one joint forward pass.
///
/// `txy` feeds both the single-translation class term and the round trip
/// `rtx = T_yx(txy)`; each activation is computed once.
#[derive(Debug, Clone)]
pub struct ActivationBundle {
    pub mode: Mode,
    pub ex: Matrix,
    pub ey: Matrix,
    pub txy: Matrix,
    pub tyx: Matrix,
    pub rtx: Matrix,
    pub rty: Matrix,
    /// `C_x(ex)`
    pub logits_x: Matrix,
    /// `C_y(ey)`
    pub logits_y: Matrix,
    /// `C_y(txy)`
    pub logits_txy: Matrix,
    /// `C_x(tyx)`
    pub logits_tyx: Matrix,
    /// `C_x(rtx)`
    pub logits_rtx: Matrix,
    /// `C_y(rty)`
    pub logits_rty: Matrix,
    pub(crate) caches: BundleCaches,
}

#[derive(Debug, Clone)]
pub(crate) struct BundleCaches {
    pub ex: ForwardCache,
    pub ey: ForwardCache,
    pub txy: ForwardCache,
    pub tyx: ForwardCache,
    pub rtx: ForwardCache,
    pub rty: ForwardCache,
    pub logits_x: ForwardCache,
    pub logits_y: ForwardCache,
    pub logits_txy: ForwardCache,
    pub logits_tyx: ForwardCache,
    pub logits_rtx: ForwardCache,
    pub logits_rty: ForwardCache,
}

/// Encoder and classifier activations only; what the classification stage needs.
#[derive(Debug, Clone)]
pub struct UnimodalBundle {
    pub mode: Mode,
    pub ex: Matrix,
    pub ey: Matrix,
    pub logits_x: Matrix,
    pub logits_y: Matrix,
    pub(crate) cache_ex: ForwardCache,
    pub(crate) cache_ey: ForwardCache,
    pub(crate) cache_logits_x: ForwardCache,
    pub(crate) cache_logits_y: ForwardCache,
}

/// Parameter gradients for all six subnetworks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub e_x: MlpGrads,
    pub e_y: MlpGrads,
    pub c_x: MlpGrads,
    pub c_y: MlpGrads,
    pub t_xy: MlpGrads,
    pub t_yx: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &DstcModel) -> Self {
        Self {
            e_x: MlpGrads::zeros_like(&model.e_x),
            e_y: MlpGrads::zeros_like(&model.e_y),
            c_x: MlpGrads::zeros_like(&model.c_x),
            c_y: MlpGrads::zeros_like(&model.c_y),
            t_xy: MlpGrads::zeros_like(&model.t_xy),
            t_yx: MlpGrads::zeros_like(&model.t_yx),
        }
    }

    pub fn get(&self, s: Subnet) -> &MlpGrads {
        match s {
            Subnet::EncoderX => &self.e_x,
            Subnet::EncoderY => &self.e_y,
            Subnet::ClassifierX => &self.c_x,
            Subnet::ClassifierY => &self.c_y,
            Subnet::TranslatorXY => &self.t_xy,
            Subnet::TranslatorYX => &self.t_yx,
        }
    }

    pub fn get_mut(&mut self, s: Subnet) -> &mut MlpGrads {
        match s {
            Subnet::EncoderX => &mut self.e_x,
            Subnet::EncoderY => &mut self.e_y,
            Subnet::ClassifierX => &mut self.c_x,
            Subnet::ClassifierY => &mut self.c_y,
            Subnet::TranslatorXY => &mut self.t_xy,
            Subnet::TranslatorYX => &mut self.t_yx,
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &ModelGrads, scale: f64) {
        for s in Subnet::ALL {
            self.get_mut(s).accumulate(other.get(s), scale);
        }
    }

    /// All gradient entries flattened in subnet then parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        Subnet::ALL
            .iter()
            .flat_map(|&s| self.get(s).slices().concat())
            .collect()
    }
}

impl DstcModel {
    /// Assembles a model from already-built subnetworks.
    pub fn from_parts(e_x: Mlp, e_y: Mlp, c_x: Mlp, c_y: Mlp, t_xy: Mlp, t_yx: Mlp, classes: usize) -> Result<Self> {
        let model = Self {
            e_x,
            e_y,
            c_x,
            c_y,
            t_xy,
            t_yx,
            num_classes: classes,
            preset: PresetName::Custom,
        };
        check_layout(|s| (model.net(s).input_dim(), model.net(s).output_dim()), classes, None)?;
        Ok(model)
    }

    /// Initializes every subnetwork from the preset; subnet `k` uses seed
    /// `seed + k`.
    pub fn build(preset: &ArchPreset, classes: usize, x_dim: usize, y_dim: usize, seed: u64) -> Result<Self> {
        preset.check(classes, x_dim, y_dim)?;
        let init = |s: Subnet| Mlp::init(preset.spec(s), seed.wrapping_add(s.index() as u64));
        Ok(Self {
            e_x: init(Subnet::EncoderX)?,
            e_y: init(Subnet::EncoderY)?,
            c_x: init(Subnet::ClassifierX)?,
            c_y: init(Subnet::ClassifierY)?,
            t_xy: init(Subnet::TranslatorXY)?,
            t_yx: init(Subnet::TranslatorYX)?,
            num_classes: classes,
            preset: preset.name,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn preset(&self) -> PresetName {
        self.preset
    }

    pub fn x_dim(&self) -> usize {
        self.e_x.input_dim()
    }

    pub fn y_dim(&self) -> usize {
        self.e_y.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.e_x.output_dim()
    }

    pub fn net(&self, s: Subnet) -> &Mlp {
        match s {
            Subnet::EncoderX => &self.e_x,
            Subnet::EncoderY => &self.e_y,
            Subnet::ClassifierX => &self.c_x,
            Subnet::ClassifierY => &self.c_y,
            Subnet::TranslatorXY => &self.t_xy,
            Subnet::TranslatorYX => &self.t_yx,
        }
    }

    pub fn net_mut(&mut self, s: Subnet) -> &mut Mlp {
        match s {
            Subnet::EncoderX => &mut self.e_x,
            Subnet::EncoderY => &mut self.e_y,
            Subnet::ClassifierX => &mut self.c_x,
            Subnet::ClassifierY => &mut self.c_y,
            Subnet::TranslatorXY => &mut self.t_xy,
            Subnet::TranslatorYX => &mut self.t_yx,
        }
    }

    /// Swaps the roles of the two modalities.
    pub fn mirrored(&self) -> Self {
        Self {
            e_x: self.e_y.clone(),
            e_y: self.e_x.clone(),
            c_x: self.c_y.clone(),
            c_y: self.c_x.clone(),
            t_xy: self.t_yx.clone(),
            t_yx: self.t_xy.clone(),
            num_classes: self.num_classes,
            preset: self.preset,
        }
    }

    /// Fails with a shape error unless the model fits data of this shape.
    pub fn check_compatible(&self, classes: usize, x_dim: usize, y_dim: usize) -> Result<()> {
        let mut problems = Vec::new();
        if classes != self.num_classes {
            problems.push(format!("model has {} classes, data has {classes}", self.num_classes));
        }
        if x_dim != self.x_dim() {
            problems.push(format!("model takes {} x features, data has {x_dim}", self.x_dim()));
        }
        if y_dim != self.y_dim() {
            problems.push(format!("model takes {} y features, data has {y_dim}", self.y_dim()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Shape(problems.join("; ")))
        }
    }

    fn check_batch(&self, x: &Matrix, y: &Matrix) -> Result<()> {
        if x.rows() == 0 || y.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.rows() != y.rows() {
            return Err(Error::dims("forward_all", x.shape(), y.shape()));
        }
        Ok(())
    }

    pub fn forward_all(&self, x: &Matrix, y: &Matrix, mode: Mode) -> Result<ActivationBundle> {
        self.check_batch(x, y)?;
        let (ex, c_ex) = self.e_x.forward(x, mode)?;
        let (ey, c_ey) = self.e_y.forward(y, mode)?;
        let (txy, c_txy) = self.t_xy.forward(&ex, mode)?;
        let (tyx, c_tyx) = self.t_yx.forward(&ey, mode)?;
        let (rtx, c_rtx) = self.t_yx.forward(&txy, mode)?;
        let (rty, c_rty) = self.t_xy.forward(&tyx, mode)?;
        let (logits_x, c_lx) = self.c_x.forward(&ex, mode)?;
        let (logits_y, c_ly) = self.c_y.forward(&ey, mode)?;
        let (logits_txy, c_ltxy) = self.c_y.forward(&txy, mode)?;
        let (logits_tyx, c_ltyx) = self.c_x.forward(&tyx, mode)?;
        let (logits_rtx, c_lrtx) = self.c_x.forward(&rtx, mode)?;
        let (logits_rty, c_lrty) = self.c_y.forward(&rty, mode)?;
        Ok(ActivationBundle {
            mode,
            ex,
            ey,
            txy,
            tyx,
            rtx,
            rty,
            logits_x,
            logits_y,
            logits_txy,
            logits_tyx,
            logits_rtx,
            logits_rty,
            caches: BundleCaches {
                ex: c_ex,
                ey: c_ey,
                txy: c_txy,
                tyx: c_tyx,
                rtx: c_rtx,
                rty: c_rty,
                logits_x: c_lx,
                logits_y: c_ly,
                logits_txy: c_ltxy,
                logits_tyx: c_ltyx,
                logits_rtx: c_lrtx,
                logits_rty: c_lrty,
            },
        })
    }

    pub fn forward_unimodal(&self, x: &Matrix, y: &Matrix, mode: Mode) -> Result<UnimodalBundle> {
        self.check_batch(x, y)?;
        let (ex, cache_ex) = self.e_x.forward(x, mode)?;
        let (ey, cache_ey) = self.e_y.forward(y, mode)?;
        let (logits_x, cache_logits_x) = self.c_x.forward(&ex, mode)?;
        let (logits_y, cache_logits_y) = self.c_y.forward(&ey, mode)?;
        Ok(UnimodalBundle {
            mode,
            ex,
            ey,
            logits_x,
            logits_y,
            cache_ex,
            cache_ey,
            cache_logits_x,
            cache_logits_y,
        })
    }

    /// Applies batch statistics from a train-mode bundle to the running
    /// estimates of the subnetworks selected by `include`.
    pub fn commit_running_stats(&mut self, bundle: &ActivationBundle, include: impl Fn(Subnet) -> bool) -> Result<()> {
        let c = &bundle.caches;
        let updates: [(Subnet, &[&ForwardCache]); 6] = [
            (Subnet::EncoderX, &[&c.ex]),
            (Subnet::EncoderY, &[&c.ey]),
            (Subnet::TranslatorXY, &[&c.txy, &c.rty]),
            (Subnet::TranslatorYX, &[&c.tyx, &c.rtx]),
            (Subnet::ClassifierX, &[&c.logits_x, &c.logits_tyx, &c.logits_rtx]),
            (Subnet::ClassifierY, &[&c.logits_y, &c.logits_txy, &c.logits_rty]),
        ];
        for (s, caches) in updates {
            if include(s) {
                for cache in caches {
                    self.net_mut(s).update_running_stats(cache)?;
                }
            }
        }
        Ok(())
    }

    pub fn commit_unimodal_stats(&mut self, bundle: &UnimodalBundle, include: impl Fn(Subnet) -> bool) -> Result<()> {
        let updates = [
            (Subnet::EncoderX, &bundle.cache_ex),
            (Subnet::EncoderY, &bundle.cache_ey),
            (Subnet::ClassifierX, &bundle.cache_logits_x),
            (Subnet::ClassifierY, &bundle.cache_logits_y),
        ];
        for (s, cache) in updates {
            if include(s) {
                self.net_mut(s).update_running_stats(cache)?;
            }
        }
        Ok(())
    }

    /// Eval-mode query embeddings `E_x(x)`.
    pub fn embed_x(&self, x: &Matrix) -> Result<Matrix> {
        self.e_x.predict(x)
    }

    pub fn embed_y(&self, y: &Matrix) -> Result<Matrix> {
        self.e_y.predict(y)
    }

    /// Eval-mode `T_xy(E_x(x))`: x items placed in the y-space.
    pub fn translate_x(&self, x: &Matrix) -> Result<Matrix> {
        self.t_xy.predict(&self.e_x.predict(x)?)
    }

    /// Eval-mode `T_yx(E_y(y))`.
    pub fn translate_y(&self, y: &Matrix) -> Result<Matrix> {
        self.t_yx.predict(&self.e_y.predict(y)?)
    }

    /// 64-bit FNV-1a over the parameter bytes and running statistics of one subnet.
    pub fn checksum(&self, s: Subnet) -> u64 {
        let net = self.net(s);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for slice in net.param_slices().into_iter().chain(net.running_stat_slices()) {
            for v in slice {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
        w.u32(self.preset.tag());
        w.u32(self.num_classes as u32);
        for s in Subnet::ALL {
            let spec = self.net(s).spec();
            w.u32(spec.dims.len() as u32);
            for &d in &spec.dims {
                w.u32(d as u32);
            }
            for &bn in &spec.batchnorm {
                w.u8(u8::from(bn));
            }
        }
        for s in Subnet::ALL {
            for layer in self.net(s).layers() {
                match layer {
                    Layer::Linear(lin) => {
                        lin.weight.data().iter().for_each(|&v| w.f32(v));
                        lin.bias.iter().for_each(|&v| w.f32(v));
                    }
                    Layer::BatchNorm(bn) => {
                        bn.gamma.iter().for_each(|&v| w.f32(v));
                        bn.beta.iter().for_each(|&v| w.f32(v));
                        bn.running_mean.iter().for_each(|&v| w.f64(v));
                        bn.running_var.iter().for_each(|&v| w.f64(v));
                        w.f64(bn.momentum);
                        w.f64(bn.eps);
                    }
                    Layer::Relu => {}
                }
            }
        }
        w.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path, MODEL_MAGIC, MODEL_VERSION)?;
        let tag = r.u32()?;
        let preset = PresetName::from_tag(tag).ok_or_else(|| r.inconsistent(format!("unknown preset tag {tag}")))?;
        let classes = r.u32()? as usize;
        let mut specs = Vec::with_capacity(6);
        for s in Subnet::ALL {
            let n = r.u32()? as usize;
            if !(2..=64).contains(&n) {
                return Err(r.inconsistent(format!("{}: implausible layer count {n}", s.name())));
            }
            let mut dims = Vec::with_capacity(n);
            for _ in 0..n {
                dims.push(r.u32()? as usize);
            }
            let mut batchnorm = Vec::with_capacity(n - 2);
            for _ in 0..n - 2 {
                batchnorm.push(match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(r.inconsistent(format!("{}: bad batch-norm flag {b}", s.name()))),
                });
            }
            let spec = MlpSpec { dims, batchnorm };
            spec.validate().map_err(|e| r.inconsistent(format!("{}: {e}", s.name())))?;
            specs.push(spec);
        }
        let mut nets = Vec::with_capacity(6);
        for spec in &specs {
            nets.push(read_mlp(&mut r, spec)?);
        }
        r.finish()?;
        let mut it = nets.into_iter();
        let mut model = Self::from_parts(
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            classes,
        )
        .map_err(|e| Error::HeaderInconsistent {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        model.preset = preset;
        Ok(model)
    }

    /// Loads a model and checks it against the data shape it will be used on.
    pub fn load_for(path: &Path, classes: usize, x_dim: usize, y_dim: usize) -> Result<Self> {
        let model = Self::load(path)?;
        model.check_compatible(classes, x_dim, y_dim)?;
        Ok(model)
    }
}

fn read_mlp(r: &mut Reader, spec: &MlpSpec) -> Result<Mlp> {
    let mut layers = Vec::new();
    let n_linear = spec.dims.len() - 1;
    for i in 0..n_linear {
        let (fan_in, fan_out) = (spec.dims[i], spec.dims[i + 1]);
        r.require(fan_in.saturating_mul(fan_out).saturating_mul(4))?;
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(r.f32()?);
        }
        let mut bias = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            bias.push(r.f32()?);
        }
        layers.push(Layer::Linear(Linear {
            weight: Matrix::new(fan_in, fan_out, w)?,
            bias,
        }));
        if i + 1 < n_linear {
            if spec.batchnorm[i] {
                let mut bn = BatchNorm::new(fan_out);
                for v in &mut bn.gamma {
                    *v = r.f32()?;
                }
                for v in &mut bn.beta {
                    *v = r.f32()?;
                }
                for v in &mut bn.running_mean {
                    *v = r.f64()?;
                }
                for v in &mut bn.running_var {
                    *v = r.f64()?;
                }
                bn.momentum = r.f64()?;
                bn.eps = r.f64()?;
                if bn.running_var.iter().any(|&v| !(v >= 0.0)) || !(bn.eps > 0.0) {
                    return Err(r.inconsistent("batch-norm statistics out of range"));
                }
                layers.push(Layer::BatchNorm(bn));
            }
            layers.push(Layer::Relu);
        }
    }
    Mlp::from_layers(layers)
}
