use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
        }
    }
    Ok(out)
}

/// Canonical key-sorted text form.
pub fn format_kv(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn take<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
    }
}

macro_rules! kv_enum {
    ($name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(match self { $($name::$var => $s),+ })
            }
        }
        impl ::std::str::FromStr for $name {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> $crate::error::Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err($crate::error::Error::Config(format!("unknown {} {s:?}", stringify!($name)))),
                }
            }
        }
    };
}
pub(crate) use kv_enum;

/// How the mask bias enters attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// `+1` on kept columns in the encoder, subtracted in the decoder.
    PaperLiteral,
    /// `−1e9` on masked columns.
    Hard,
}
kv_enum!(MaskMode { PaperLiteral => "paper_literal", Hard => "hard" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskTokenInit {
    Zero,
    Randn,
}
kv_enum!(MaskTokenInit { Zero => "zero", Randn => "randn" });

/// How the encoder output is shortened to `m` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenReduction {
    /// Top-`m` rows by the query vector.
    Query,
    /// Learned `m×N` projection (and `N×m` expansion).
    Dense,
    /// Averages contiguous groups, repeats on expansion.
    Merge,
}
kv_enum!(TokenReduction { Query => "query", Dense => "dense", Merge => "merge" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Float,
    Uniform,
    Vq,
}
kv_enum!(QuantMode { Float => "float", Uniform => "uniform", Vq => "vq" });

/// Architecture hyperparameters shared by the feedback and estimation models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Sequence length `N` (subbands, or subcarriers for estimation).
    pub n_tokens: usize,
    pub d_tok: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Encoder blocks including the final mask-attention block.
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub mlp_expansion: usize,
    pub d_q: usize,
    /// Kept rows `m`.
    pub keep: usize,
    pub mask_mode: MaskMode,
    pub mask_token_init: MaskTokenInit,
    pub mask_token_trainable: bool,
    pub query_learnable: bool,
    pub reduction: TokenReduction,
    pub share_io: bool,
    pub mixer_blocks: usize,
    pub mixer_expansion: usize,
    /// Estimation decoder refines a linear interpolation of the denoised
    /// pilots instead of predicting the band from scratch.
    pub interp_skip: bool,
    pub quant: QuantMode,
    pub quant_bits: u8,
    pub vq_size: usize,
    pub vq_beta: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_tokens: 13,
            d_tok: 64,
            d_model: 64,
            n_heads: 4,
            enc_depth: 3,
            dec_depth: 3,
            mlp_expansion: 2,
            d_q: 4,
            keep: 8,
            mask_mode: MaskMode::Hard,
            mask_token_init: MaskTokenInit::Zero,
            mask_token_trainable: true,
            query_learnable: true,
            reduction: TokenReduction::Query,
            share_io: false,
            mixer_blocks: 2,
            mixer_expansion: 2,
            interp_skip: true,
            quant: QuantMode::Float,
            quant_bits: 2,
            vq_size: 256,
            vq_beta: 0.25,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_tokens == 0 || self.d_tok == 0 || self.d_model == 0 || self.d_q == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.enc_depth == 0 || self.dec_depth == 0 || self.mlp_expansion == 0 || self.mixer_expansion == 0 {
            return bad("depths and expansions must be positive".into());
        }
        if self.keep == 0 || self.keep > self.n_tokens {
            return bad(format!("keep {} outside [1, {}]", self.keep, self.n_tokens));
        }
        if self.quant == QuantMode::Uniform && !(1..=16).contains(&self.quant_bits) {
            return bad(format!("quant_bits {} outside [1, 16]", self.quant_bits));
        }
        if self.quant == QuantMode::Vq && (self.vq_size < 2 || !self.vq_size.is_power_of_two()) {
            return bad(format!("vq_size {} is not a power of two", self.vq_size));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("d_model", self.d_model.to_string());
        put("d_q", self.d_q.to_string());
        put("d_tok", self.d_tok.to_string());
        put("dec_depth", self.dec_depth.to_string());
        put("enc_depth", self.enc_depth.to_string());
        put("init_seed", self.init_seed.to_string());
        put("interp_skip", self.interp_skip.to_string());
        put("keep", self.keep.to_string());
        put("mask_mode", self.mask_mode.to_string());
        put("mask_token_init", self.mask_token_init.to_string());
        put("mask_token_trainable", self.mask_token_trainable.to_string());
        put("mixer_blocks", self.mixer_blocks.to_string());
        put("mixer_expansion", self.mixer_expansion.to_string());
        put("mlp_expansion", self.mlp_expansion.to_string());
        put("n_heads", self.n_heads.to_string());
        put("n_tokens", self.n_tokens.to_string());
        put("quant", self.quant.to_string());
        put("quant_bits", self.quant_bits.to_string());
        put("query_learnable", self.query_learnable.to_string());
        put("reduction", self.reduction.to_string());
        put("share_io", self.share_io.to_string());
        put("vq_beta", format!("{:?}", self.vq_beta));
        put("vq_size", self.vq_size.to_string());
        m
    }

    /// Reads known keys, falling back to `base` for missing ones. Unknown
    /// keys are ignored.
    pub fn from_kv(map: &BTreeMap<String, String>, base: &ModelConfig) -> Result<Self> {
        let c = Self {
            n_tokens: take(map, "n_tokens", base.n_tokens)?,
            d_tok: take(map, "d_tok", base.d_tok)?,
            d_model: take(map, "d_model", base.d_model)?,
            n_heads: take(map, "n_heads", base.n_heads)?,
            enc_depth: take(map, "enc_depth", base.enc_depth)?,
            dec_depth: take(map, "dec_depth", base.dec_depth)?,
            mlp_expansion: take(map, "mlp_expansion", base.mlp_expansion)?,
            d_q: take(map, "d_q", base.d_q)?,
            keep: take(map, "keep", base.keep)?,
            mask_mode: take(map, "mask_mode", base.mask_mode)?,
            mask_token_init: take(map, "mask_token_init", base.mask_token_init)?,
            mask_token_trainable: take(map, "mask_token_trainable", base.mask_token_trainable)?,
            query_learnable: take(map, "query_learnable", base.query_learnable)?,
            reduction: take(map, "reduction", base.reduction)?,
            share_io: take(map, "share_io", base.share_io)?,
            mixer_blocks: take(map, "mixer_blocks", base.mixer_blocks)?,
            mixer_expansion: take(map, "mixer_expansion", base.mixer_expansion)?,
            interp_skip: take(map, "interp_skip", base.interp_skip)?,
            quant: take(map, "quant", base.quant)?,
            quant_bits: take(map, "quant_bits", base.quant_bits)?,
            vq_size: take(map, "vq_size", base.vq_size)?,
            vq_beta: take(map, "vq_beta", base.vq_beta)?,
            init_seed: take(map, "init_seed", base.init_seed)?,
        };
        Ok(c)
    }
}
