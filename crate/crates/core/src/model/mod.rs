//! Masked-autoencoder vision transformer with a [CLS] token at index 0 and,
//! when enabled, a [POSE] token at index 1.
//!
//! Forward passes are built on the autodiff tape; batches of images are
//! packed as `(batch * tokens, dim)` matrices with block-diagonal attention.

pub mod checkpoint;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{ImageBuf, PIXEL_MEAN, PIXEL_STD};
use crate::masking::PatchMask;
use crate::rng::{sample_standard_normal, seeded_rng};

const LN_EPS: f64 = 1e-6;

/// Which special token to read out of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Cls,
    Pose,
}

impl std::str::FromStr for TokenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(TokenKind::Cls),
            "pose" => Ok(TokenKind::Pose),
            other => Err(Error::Config(format!("unknown token `{other}` (expected pose|cls)"))),
        }
    }
}

/// One named parameter tensor; `decay` controls weight-decay eligibility.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub decay: bool,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    pos_embed: usize,
    cls: usize,
    pose: Option<usize>,
    enc: Vec<BlockIdx>,
    enc_ng: usize,
    enc_nb: usize,
    dec_w: usize,
    dec_b: usize,
    mask_token: usize,
    dec_pos: usize,
    dec: Vec<BlockIdx>,
    dec_ng: usize,
    dec_nb: usize,
    head_w: usize,
    head_b: usize,
}

/// Encoder output for a single image: special tokens plus the visible patch
/// tokens ordered by original patch index.
#[derive(Debug, Clone)]
pub struct TokenBundle {
    pub cls: Vec<f64>,
    pub pose: Option<Vec<f64>>,
    pub patch_tokens: Matrix,
    pub visible_indices: Vec<usize>,
}

/// Handles to the parameters inserted into a tape, aligned with
/// `Model::params`.
pub struct TapeParams(pub Vec<NodeId>);

/// A batch run through the encoder.
pub struct EncodedBatch {
    pub seq: NodeId,
    pub batch: usize,
    pub tokens_per_image: usize,
    pub visible: Vec<Vec<usize>>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub patch_size: usize,
    pub image_hw: (usize, usize),
    pub use_pose_token: bool,
    pub params: Vec<Param>,
    layout: Layout,
}

struct ParamBuilder {
    params: Vec<Param>,
    rng: crate::rng::RngStream,
}

impl ParamBuilder {
    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Matrix::from_shape_fn((rows, cols), |_| self.rng.gen_range(-limit..=limit));
        self.push(name, value, true)
    }

    fn token(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let value = Matrix::from_shape_fn((rows, cols), |_| {
            0.02 * sample_standard_normal(&mut self.rng)
        });
        self.push(name, value, false)
    }

    fn zeros(&mut self, name: &str, cols: usize) -> usize {
        self.push(name, Matrix::zeros((1, cols)), false)
    }

    fn ones(&mut self, name: &str, cols: usize) -> usize {
        self.push(name, Matrix::ones((1, cols)), false)
    }

    fn push(&mut self, name: &str, value: Matrix, decay: bool) -> usize {
        self.params.push(Param {
            name: name.to_string(),
            value,
            decay,
        });
        self.params.len() - 1
    }

    fn block(&mut self, prefix: &str, dim: usize, mlp_ratio: usize) -> BlockIdx {
        BlockIdx {
            ln1_g: self.ones(&format!("{prefix}.ln1.g"), dim),
            ln1_b: self.zeros(&format!("{prefix}.ln1.b"), dim),
            qkv_w: self.xavier(&format!("{prefix}.qkv.w"), dim, 3 * dim),
            qkv_b: self.zeros(&format!("{prefix}.qkv.b"), 3 * dim),
            proj_w: self.xavier(&format!("{prefix}.proj.w"), dim, dim),
            proj_b: self.zeros(&format!("{prefix}.proj.b"), dim),
            ln2_g: self.ones(&format!("{prefix}.ln2.g"), dim),
            ln2_b: self.zeros(&format!("{prefix}.ln2.b"), dim),
            fc1_w: self.xavier(&format!("{prefix}.fc1.w"), dim, mlp_ratio * dim),
            fc1_b: self.zeros(&format!("{prefix}.fc1.b"), mlp_ratio * dim),
            fc2_w: self.xavier(&format!("{prefix}.fc2.w"), mlp_ratio * dim, dim),
            fc2_b: self.zeros(&format!("{prefix}.fc2.b"), dim),
        }
    }
}

impl Model {
    /// Build a freshly initialized model: Xavier-uniform weights, zero
    /// biases, small-normal token and positional embeddings.
    pub fn new(train_cfg: &TrainConfig) -> Result<Self> {
        train_cfg.validate()?;
        let cfg = train_cfg.model.clone();
        let patch_size = train_cfg.patch_size;
        let image_hw = train_cfg.image_hw;
        let use_pose_token = train_cfg.use_pose_token;
        let num_patches = train_cfg.num_patches();
        let patch_dim = patch_size * patch_size * 3;
        let specials = 1 + usize::from(use_pose_token);
        let d = cfg.embed_dim;
        let dd = cfg.decoder_dim;

        let mut b = ParamBuilder {
            params: Vec::new(),
            rng: seeded_rng(train_cfg.seed, "model/init"),
        };
        let patch_w = b.xavier("patch_embed.w", patch_dim, d);
        let patch_b = b.zeros("patch_embed.b", d);
        let pos_embed = b.token("pos_embed", num_patches, d);
        let cls = b.token("cls_token", 1, d);
        let pose = use_pose_token.then(|| b.token("pose_token", 1, d));
        let enc = (0..cfg.depth)
            .map(|i| b.block(&format!("enc.{i}"), d, cfg.mlp_ratio))
            .collect();
        let enc_ng = b.ones("enc.norm.g", d);
        let enc_nb = b.zeros("enc.norm.b", d);
        let dec_w = b.xavier("dec_embed.w", d, dd);
        let dec_b = b.zeros("dec_embed.b", dd);
        let mask_token = b.token("mask_token", 1, dd);
        let dec_pos = b.token("dec_pos_embed", specials + num_patches, dd);
        let dec = (0..cfg.decoder_depth)
            .map(|i| b.block(&format!("dec.{i}"), dd, cfg.mlp_ratio))
            .collect();
        let dec_ng = b.ones("dec.norm.g", dd);
        let dec_nb = b.zeros("dec.norm.b", dd);
        let head_w = b.xavier("head.w", dd, patch_dim);
        let head_b = b.zeros("head.b", patch_dim);

        Ok(Self {
            cfg,
            patch_size,
            image_hw,
            use_pose_token,
            params: b.params,
            layout: Layout {
                patch_w,
                patch_b,
                pos_embed,
                cls,
                pose,
                enc,
                enc_ng,
                enc_nb,
                dec_w,
                dec_b,
                mask_token,
                dec_pos,
                dec,
                dec_ng,
                dec_nb,
                head_w,
                head_b,
            },
        })
    }

    pub fn num_patches(&self) -> usize {
        (self.image_hw.0 / self.patch_size) * (self.image_hw.1 / self.patch_size)
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.image_hw.0 / self.patch_size,
            self.image_hw.1 / self.patch_size,
        )
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Number of special tokens (1 or 2).
    pub fn specials(&self) -> usize {
        1 + usize::from(self.use_pose_token)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Insert every parameter as a tape leaf.
    pub fn insert_params(&self, tape: &mut Tape) -> TapeParams {
        TapeParams(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        )
    }

    /// Split an image into normalized flattened patches, `(P, patch_dim)`,
    /// row-major over the patch grid.
    pub fn patchify(&self, img: &ImageBuf) -> Result<Matrix> {
        if (img.h, img.w) != self.image_hw {
            return Err(Error::Shape(format!(
                "image {}x{} does not match configured {}x{}",
                img.h, img.w, self.image_hw.0, self.image_hw.1
            )));
        }
        let ps = self.patch_size;
        let (gh, gw) = self.patch_grid();
        let mut out = Matrix::zeros((gh * gw, self.patch_dim()));
        for gy in 0..gh {
            for gx in 0..gw {
                let row = gy * gw + gx;
                let mut col = 0;
                for py in 0..ps {
                    for px in 0..ps {
                        let rgb = img.get(gy * ps + py, gx * ps + px);
                        for c in 0..3 {
                            out[[row, col]] = (rgb[c] - PIXEL_MEAN[c]) / PIXEL_STD[c];
                            col += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reconstruction targets for a batch, `(B * P, patch_dim)`; optionally
    /// standardized per patch.
    pub fn patch_targets(&self, images: &[&ImageBuf]) -> Result<Matrix> {
        let p = self.num_patches();
        let mut out = Matrix::zeros((images.len() * p, self.patch_dim()));
        for (i, img) in images.iter().enumerate() {
            let mut patches = self.patchify(img)?;
            if self.cfg.norm_pix_targets {
                for mut row in patches.rows_mut() {
                    let n = row.len() as f64;
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let rstd = 1.0 / (var + 1e-6).sqrt();
                    row.mapv_inplace(|v| (v - mean) * rstd);
                }
            }
            out.slice_mut(ndarray::s![i * p..(i + 1) * p, ..]).assign(&patches);
        }
        Ok(out)
    }

    fn block_forward(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        x: NodeId,
        block: &BlockIdx,
        tokens: usize,
        dim: usize,
    ) -> NodeId {
        let heads = self.cfg.heads;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = &tp.0;

        let h = tape.layer_norm(x, p[block.ln1_g], p[block.ln1_b], LN_EPS);
        let qkv_mm = tape.matmul(h, p[block.qkv_w]);
        let qkv = tape.add_bias(qkv_mm, p[block.qkv_b]);
        let mut ctx_heads = Vec::with_capacity(heads);
        for hd in 0..heads {
            let q = tape.slice_cols(qkv, hd * dh, dh);
            let k = tape.slice_cols(qkv, dim + hd * dh, dh);
            let v = tape.slice_cols(qkv, 2 * dim + hd * dh, dh);
            ctx_heads.push(tape.attention(q, k, v, tokens, scale));
        }
        let ctx = if heads == 1 {
            ctx_heads[0]
        } else {
            tape.concat_cols(&ctx_heads)
        };
        let proj_mm = tape.matmul(ctx, p[block.proj_w]);
        let att = tape.add_bias(proj_mm, p[block.proj_b]);
        let x = tape.add(x, att);

        let h2 = tape.layer_norm(x, p[block.ln2_g], p[block.ln2_b], LN_EPS);
        let fc1_mm = tape.matmul(h2, p[block.fc1_w]);
        let fc1 = tape.add_bias(fc1_mm, p[block.fc1_b]);
        let act = tape.gelu(fc1);
        let fc2_mm = tape.matmul(act, p[block.fc2_w]);
        let mlp = tape.add_bias(fc2_mm, p[block.fc2_b]);
        tape.add(x, mlp)
    }

    /// Encode a batch with explicit per-image visible patch index lists (all
    /// lists must share one length so sequences batch together).
    pub fn encode_batch_vis(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        images: &[&ImageBuf],
        visible: &[Vec<usize>],
    ) -> Result<EncodedBatch> {
        let batch = images.len();
        if batch == 0 || visible.len() != batch {
            return Err(Error::Shape("encode_batch: empty batch or mismatched masks".into()));
        }
        let v = visible[0].len();
        if v == 0 || visible.iter().any(|s| s.len() != v) {
            return Err(Error::Shape(
                "encode_batch: visible sets must be non-empty and equally sized".into(),
            ));
        }
        let num_patches = self.num_patches();
        let patch_dim = self.patch_dim();
        let specials = self.specials();
        let p = &tp.0;

        // Visible patches of every image, stacked.
        let mut vis_pixels = Matrix::zeros((batch * v, patch_dim));
        let mut pos_idx = Vec::with_capacity(batch * v);
        for (i, img) in images.iter().enumerate() {
            let patches = self.patchify(img)?;
            for (j, &pi) in visible[i].iter().enumerate() {
                if pi >= num_patches {
                    return Err(Error::Shape(format!("visible index {pi} out of range")));
                }
                vis_pixels.row_mut(i * v + j).assign(&patches.row(pi));
                pos_idx.push(pi);
            }
        }
        let vis_const = tape.constant(vis_pixels);
        let emb_mm = tape.matmul(vis_const, p[self.layout.patch_w]);
        let emb = tape.add_bias(emb_mm, p[self.layout.patch_b]);
        let pos = tape.gather_rows(p[self.layout.pos_embed], pos_idx);
        let x = tape.add(emb, pos);

        // Interleave [CLS] (and [POSE]) with each image's patch rows.
        let mut base_parts = vec![p[self.layout.cls]];
        if let Some(pose) = self.layout.pose {
            base_parts.push(p[pose]);
        }
        base_parts.push(x);
        let base = tape.concat_rows(&base_parts);
        let tokens = specials + v;
        let mut order = Vec::with_capacity(batch * tokens);
        for i in 0..batch {
            for s in 0..specials {
                order.push(s);
            }
            for j in 0..v {
                order.push(specials + i * v + j);
            }
        }
        let mut seq = tape.gather_rows(base, order);

        for block in &self.layout.enc {
            seq = self.block_forward(tape, tp, seq, block, tokens, self.cfg.embed_dim);
        }
        seq = tape.layer_norm(seq, p[self.layout.enc_ng], p[self.layout.enc_nb], LN_EPS);
        Ok(EncodedBatch {
            seq,
            batch,
            tokens_per_image: tokens,
            visible: visible.to_vec(),
        })
    }

    /// Encode a batch under patch masks (masked patches excluded).
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        images: &[&ImageBuf],
        masks: &[PatchMask],
    ) -> Result<EncodedBatch> {
        if masks.len() != images.len() {
            return Err(Error::Shape("encode_batch: one mask per image required".into()));
        }
        let grid = self.patch_grid();
        for m in masks {
            if m.grid_hw != grid {
                return Err(Error::Shape(format!(
                    "mask grid {:?} does not match patch grid {grid:?}",
                    m.grid_hw
                )));
            }
        }
        let visible: Vec<Vec<usize>> = masks.iter().map(|m| m.visible_indices()).collect();
        self.encode_batch_vis(tape, tp, images, &visible)
    }

    /// Encode with every patch visible (evaluation path).
    pub fn encode_batch_full(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        images: &[&ImageBuf],
    ) -> Result<EncodedBatch> {
        let all: Vec<usize> = (0..self.num_patches()).collect();
        let visible = vec![all; images.len()];
        self.encode_batch_vis(tape, tp, images, &visible)
    }

    /// Rows of one special token across the batch, `(B, embed_dim)`.
    pub fn special_rows(&self, tape: &mut Tape, enc: &EncodedBatch, token: TokenKind) -> Result<NodeId> {
        let offset = match token {
            TokenKind::Cls => 0,
            TokenKind::Pose => {
                if !self.use_pose_token {
                    return Err(Error::Config("model has no [POSE] token".into()));
                }
                1
            }
        };
        let idx: Vec<usize> = (0..enc.batch)
            .map(|i| i * enc.tokens_per_image + offset)
            .collect();
        Ok(tape.gather_rows(enc.seq, idx))
    }

    /// Decode to per-patch pixel predictions for every patch of every image,
    /// `(B * P, patch_dim)`. Learned mask tokens fill the masked positions;
    /// special tokens ride through the decoder and are dropped at the head.
    pub fn decode_batch(&self, tape: &mut Tape, tp: &TapeParams, enc: &EncodedBatch) -> NodeId {
        let p = &tp.0;
        let num_patches = self.num_patches();
        let specials = self.specials();
        let batch = enc.batch;
        let enc_tokens = enc.tokens_per_image;
        let v = enc_tokens - specials;

        let dec_mm = tape.matmul(enc.seq, p[self.layout.dec_w]);
        let y = tape.add_bias(dec_mm, p[self.layout.dec_b]);
        let n_masked = num_patches - v;
        let dec_tokens = specials + num_patches;

        let stacked = if n_masked > 0 {
            let mask_rows = tape.repeat_row(p[self.layout.mask_token], batch * n_masked);
            tape.concat_rows(&[y, mask_rows])
        } else {
            y
        };

        // Row order: per image, specials then all patches in grid order.
        let mut order = Vec::with_capacity(batch * dec_tokens);
        let mut pos_idx = Vec::with_capacity(batch * dec_tokens);
        let mut mask_cursor = batch * enc_tokens;
        for i in 0..batch {
            let mut rank = vec![usize::MAX; num_patches];
            for (j, &pi) in enc.visible[i].iter().enumerate() {
                rank[pi] = j;
            }
            for s in 0..specials {
                order.push(i * enc_tokens + s);
                pos_idx.push(s);
            }
            for (pi, r) in rank.iter().enumerate() {
                if *r == usize::MAX {
                    order.push(mask_cursor);
                    mask_cursor += 1;
                } else {
                    order.push(i * enc_tokens + specials + r);
                }
                pos_idx.push(specials + pi);
            }
        }
        let gathered = tape.gather_rows(stacked, order);
        let pos = tape.gather_rows(p[self.layout.dec_pos], pos_idx);
        let mut seq = tape.add(gathered, pos);

        for block in &self.layout.dec {
            seq = self.block_forward(tape, tp, seq, block, dec_tokens, self.cfg.decoder_dim);
        }
        seq = tape.layer_norm(seq, p[self.layout.dec_ng], p[self.layout.dec_nb], LN_EPS);

        let patch_rows: Vec<usize> = (0..batch)
            .flat_map(|i| (0..num_patches).map(move |pi| i * dec_tokens + specials + pi))
            .collect();
        let patches = tape.gather_rows(seq, patch_rows);
        let head_mm = tape.matmul(patches, p[self.layout.head_w]);
        tape.add_bias(head_mm, p[self.layout.head_b])
    }

    /// Encode one image (value-level convenience over the batch path).
    pub fn encode(&self, image: &ImageBuf, mask: &PatchMask) -> Result<TokenBundle> {
        let mut tape = Tape::new();
        let tp = self.insert_params(&mut tape);
        let enc = self.encode_batch(&mut tape, &tp, &[image], std::slice::from_ref(mask))?;
        let seq = tape.value(enc.seq);
        let specials = self.specials();
        let cls = seq.row(0).to_vec();
        let pose = self.use_pose_token.then(|| seq.row(1).to_vec());
        let patch_tokens = seq
            .slice(ndarray::s![specials..enc.tokens_per_image, ..])
            .to_owned();
        Ok(TokenBundle {
            cls,
            pose,
            patch_tokens,
            visible_indices: enc.visible[0].clone(),
        })
    }

    /// Full reconstruction predictions for one image, `(P, patch_dim)`.
    pub fn decode(&self, image: &ImageBuf, mask: &PatchMask) -> Result<Matrix> {
        let mut tape = Tape::new();
        let tp = self.insert_params(&mut tape);
        let enc = self.encode_batch(&mut tape, &tp, &[image], std::slice::from_ref(mask))?;
        let preds = self.decode_batch(&mut tape, &tp, &enc);
        Ok(tape.value(preds).clone())
    }

    /// Embed images with no masking and return the chosen token per image,
    /// `(B, embed_dim)`, not normalized.
    pub fn embed_images(&self, images: &[&ImageBuf], token: TokenKind) -> Result<Matrix> {
        let mut out = Matrix::zeros((images.len(), self.cfg.embed_dim));
        // Chunked so tape memory stays bounded on large eval sets.
        let chunk = 64usize;
        for (ci, batch) in images.chunks(chunk).enumerate() {
            let mut tape = Tape::new();
            let tp = self.insert_params(&mut tape);
            let enc = self.encode_batch_full(&mut tape, &tp, batch)?;
            let rows = self.special_rows(&mut tape, &enc, token)?;
            let vals = tape.value(rows);
            out.slice_mut(ndarray::s![ci * chunk..ci * chunk + batch.len(), ..])
                .assign(vals);
        }
        Ok(out)
    }
}

/// L2-normalize one token vector; a zero vector is an error.
pub fn normalize_token(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::Data("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// L2-normalize each row of a value matrix (plain, non-tape).
pub fn normalize_rows_value(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 0.0 {
            return Err(Error::Data("cannot normalize a zero row".into()));
        }
        row.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::gen_mask;
    use crate::rng::seeded_rng;

    fn small_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model = ModelConfig {
            embed_dim: 32,
            depth: 2,
            heads: 4,
            decoder_dim: 16,
            decoder_depth: 1,
            mlp_ratio: 2,
            norm_pix_targets: false,
        };
        cfg
    }

    fn test_image(hw: (usize, usize), seed: u64) -> ImageBuf {
        let mut rng = seeded_rng(seed, "model/test_image");
        let mut img = ImageBuf::new(hw.0, hw.1);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..=255.0);
        }
        img
    }

    fn test_pose() -> crate::pose::PoseLabel {
        let mut kps = [[0.0; 2]; 17];
        for (i, kp) in kps.iter_mut().enumerate() {
            kp[0] = 4.0 + 2.5 * i as f64;
            kp[1] = 6.0 + 3.0 * i as f64;
        }
        crate::pose::PoseLabel::new(kps, [true; 17], "p0")
    }

    #[test]
    fn token_counts_follow_mask_and_pose_switch() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let img = test_image(cfg.image_hw, 1);
        let mask = gen_mask(&test_pose(), &cfg, &mut seeded_rng(2, "model/mask"));
        let bundle = model.encode(&img, &mask).unwrap();
        assert_eq!(bundle.patch_tokens.nrows(), 12); // 48 - 36 masked
        assert!(bundle.pose.is_some());
        assert_eq!(bundle.cls.len(), 32);

        let mut cfg0 = cfg.clone();
        cfg0.use_pose_token = false;
        let model0 = Model::new(&cfg0).unwrap();
        let bundle0 = model0.encode(&img, &mask).unwrap();
        assert!(bundle0.pose.is_none());
        assert_eq!(bundle0.patch_tokens.nrows(), 12);
    }

    #[test]
    fn patch_tokens_track_each_masks_visible_set() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let img = test_image(cfg.image_hw, 3);
        let m1 = gen_mask(&test_pose(), &cfg, &mut seeded_rng(4, "model/m1"));
        let m2 = gen_mask(&test_pose(), &cfg, &mut seeded_rng(4, "model/m2"));
        assert_ne!(m1.grid, m2.grid);
        let b1 = model.encode(&img, &m1).unwrap();
        let b2 = model.encode(&img, &m2).unwrap();
        assert_eq!(b1.visible_indices, m1.visible_indices());
        assert_eq!(b2.visible_indices, m2.visible_indices());
    }

    #[test]
    fn decode_covers_all_patches_and_is_deterministic() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let img = test_image(cfg.image_hw, 5);
        let mask = gen_mask(&test_pose(), &cfg, &mut seeded_rng(6, "model/dec"));
        let preds = model.decode(&img, &mask).unwrap();
        assert_eq!(preds.dim(), (48, 8 * 8 * 3));
        let again = model.decode(&img, &mask).unwrap();
        assert_eq!(preds, again);
    }

    #[test]
    fn decoder_dim_differs_from_encoder_dim() {
        let cfg = small_config(); // 32 vs 16 already differ
        assert_ne!(cfg.model.embed_dim, cfg.model.decoder_dim);
        let model = Model::new(&cfg).unwrap();
        let img = test_image(cfg.image_hw, 7);
        let mask = gen_mask(&test_pose(), &cfg, &mut seeded_rng(8, "model/dims"));
        assert!(model.decode(&img, &mask).is_ok());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let wrong = test_image((32, 24), 9);
        let mask = gen_mask(&test_pose(), &cfg, &mut seeded_rng(10, "model/shape"));
        assert!(model.encode(&wrong, &mask).is_err());

        let mut other = cfg.clone();
        other.patch_size = 4;
        other.image_hw = (64, 48);
        let bad_mask = gen_mask(&test_pose(), &other, &mut seeded_rng(11, "model/shape2"));
        let img = test_image(cfg.image_hw, 12);
        assert!(model.encode(&img, &bad_mask).is_err());
    }

    #[test]
    fn normalize_token_examples() {
        let out = normalize_token(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);
        let unit = normalize_token(&out).unwrap();
        assert!((unit[0] - 0.6).abs() < 1e-12, "idempotent on unit vectors");
        assert!(normalize_token(&[0.0, 0.0]).is_err());
        let n: f64 = normalize_token(&[1e-3, 2e-3, -4e-3])
            .unwrap()
            .iter()
            .map(|v| v * v)
            .sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cls_and_pose_embeddings_differ_at_initialization() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let cls = model.params.iter().find(|p| p.name == "cls_token").unwrap();
        let pose = model.params.iter().find(|p| p.name == "pose_token").unwrap();
        assert_ne!(cls.value, pose.value);
    }

    #[test]
    fn xavier_variance_matches_formula_on_large_layers() {
        let mut cfg = TrainConfig::default();
        cfg.model.embed_dim = 128;
        let model = Model::new(&cfg).unwrap();
        for name in ["enc.0.fc1.w", "enc.0.qkv.w", "patch_embed.w"] {
            let p = model.params.iter().find(|p| p.name == name).unwrap();
            let (rows, cols) = p.value.dim();
            let expected = 2.0 / (rows + cols) as f64; // var of U(-sqrt(6/(a+b)), +)
            let mean = p.value.sum() / p.value.len() as f64;
            let var = p.value.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / p.value.len() as f64;
            assert!(
                (var - expected).abs() / expected < 0.1,
                "{name}: var {var} vs xavier {expected}"
            );
        }
    }

    #[test]
    fn permuting_visible_patch_order_leaves_outputs_unchanged() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let img = test_image(cfg.image_hw, 13);
        let mask = gen_mask(&test_pose(), &cfg, &mut seeded_rng(14, "model/perm"));
        let canonical = mask.visible_indices();
        let mut permuted = canonical.clone();
        permuted.reverse();
        permuted.swap(0, 5);

        let run = |vis: &Vec<usize>| {
            let mut tape = Tape::new();
            let tp = model.insert_params(&mut tape);
            let enc = model
                .encode_batch_vis(&mut tape, &tp, &[&img], std::slice::from_ref(vis))
                .unwrap();
            let seq = tape.value(enc.seq).clone();
            (seq, enc.tokens_per_image)
        };
        let (seq_a, tokens) = run(&canonical);
        let (seq_b, _) = run(&permuted);
        // specials directly comparable
        for s in 0..model.specials() {
            for c in 0..cfg.model.embed_dim {
                assert!((seq_a[[s, c]] - seq_b[[s, c]]).abs() < 1e-5);
            }
        }
        // patch tokens comparable after inverting the permutation
        for (j, &pi) in permuted.iter().enumerate() {
            let a_row = model.specials() + canonical.iter().position(|x| *x == pi).unwrap();
            let b_row = model.specials() + j;
            assert!(a_row < tokens && b_row < tokens);
            for c in 0..cfg.model.embed_dim {
                assert!(
                    (seq_a[[a_row, c]] - seq_b[[b_row, c]]).abs() < 1e-5,
                    "patch {pi} differs"
                );
            }
        }
    }

    #[test]
    fn batched_and_single_encodes_agree() {
        let cfg = small_config();
        let model = Model::new(&cfg).unwrap();
        let img1 = test_image(cfg.image_hw, 15);
        let img2 = test_image(cfg.image_hw, 16);
        let m1 = gen_mask(&test_pose(), &cfg, &mut seeded_rng(17, "model/b1"));
        let m2 = gen_mask(&test_pose(), &cfg, &mut seeded_rng(18, "model/b2"));

        let mut tape = Tape::new();
        let tp = model.insert_params(&mut tape);
        let enc = model
            .encode_batch(&mut tape, &tp, &[&img1, &img2], &[m1.clone(), m2.clone()])
            .unwrap();
        let seq = tape.value(enc.seq).clone();

        let single1 = model.encode(&img1, &m1).unwrap();
        let single2 = model.encode(&img2, &m2).unwrap();
        let t = enc.tokens_per_image;
        for c in 0..cfg.model.embed_dim {
            assert!((seq[[0, c]] - single1.cls[c]).abs() < 1e-10);
            assert!((seq[[t, c]] - single2.cls[c]).abs() < 1e-10);
        }
    }
}
