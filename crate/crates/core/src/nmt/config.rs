use std::fmt;
use std::str::FromStr;

use super::NmtError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Rnn,
    Conv,
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    /// Score `vᵀ tanh(W₁h_t + W₂h̄_s)` over every source position.
    GlobalAdditive,
    /// Bilinear score `h_tᵀ W h̄_s` inside a window around a predicted
    /// position, reweighted by a Gaussian.
    LocalMultiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

macro_rules! keyword_enum {
    ($ty:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$v => $s),+ })
            }
        }

        impl FromStr for $ty {
            type Err = NmtError;

            fn from_str(s: &str) -> Result<Self, NmtError> {
                match s {
                    $($s => Ok($ty::$v),)+
                    _ => Err(NmtError::Config(format!("unknown {} `{s}`", stringify!($ty)))),
                }
            }
        }
    };
}

keyword_enum!(Architecture { Rnn => "rnn", Conv => "conv", Transformer => "transformer" });
keyword_enum!(AttentionKind { None => "none", GlobalAdditive => "global_additive", LocalMultiplicative => "local_multiplicative" });
keyword_enum!(OptimizerKind { Sgd => "sgd", Adam => "adam" });

/// One convolutional block: output channels and kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub channels: usize,
    pub width: usize,
}

/// Parses `512x3*9,1024x3*4,2048x1*2` (channels `x` width `*` repeat).
pub fn parse_conv_layout(s: &str) -> Result<Vec<ConvLayer>, NmtError> {
    let bad = || NmtError::Config(format!("bad conv_layout `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (spec, rep) = part.split_once('*').unwrap_or((part, "1"));
        let (c, w) = spec.split_once('x').ok_or_else(bad)?;
        let layer = ConvLayer { channels: c.trim().parse().map_err(|_| bad())?, width: w.trim().parse().map_err(|_| bad())? };
        let rep: usize = rep.trim().parse().map_err(|_| bad())?;
        out.extend(std::iter::repeat_n(layer, rep));
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Hyperparameters of one model and its training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub hidden_units: usize,
    pub embed_dim: usize,
    pub attention: AttentionKind,
    pub bidirectional_first: bool,
    /// 1-based layer from which residual connections start.
    pub residual_from_layer: Option<usize>,
    pub heads: usize,
    pub kernel_width: usize,
    /// Overrides `num_layers`, `hidden_units` and `kernel_width` for conv.
    pub conv_layout: Option<String>,
    pub local_window: usize,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Rnn,
            num_layers: 2,
            hidden_units: 128,
            embed_dim: 128,
            attention: AttentionKind::None,
            bidirectional_first: false,
            residual_from_layer: None,
            heads: 1,
            kernel_width: 3,
            conv_layout: None,
            local_window: 5,
            dropout: 0.2,
            optimizer: OptimizerKind::Sgd,
            lr: 1.0,
            batch_size: 128,
            max_epochs: 417,
            patience: 20,
            clip_norm: 5.0,
            beam_width: 5,
            max_len: 60,
            max_positions: 128,
            seed: 1,
        }
    }
}

/// Step budgets expressed in epochs: about 120 steps of batch 128
/// make one epoch on the Monument data.
pub const STEPS_PER_EPOCH: usize = 120;

fn steps_to_epochs(steps: usize) -> usize {
    steps.div_ceil(STEPS_PER_EPOCH)
}

pub const PRESETS: [&str; 13] = [
    "nspm",
    "nspm_att1",
    "nspm_att2",
    "gnmt4",
    "gnmt8",
    "lstm_luong",
    "convs2s",
    "transformer",
    "desk_rnn",
    "desk_rnn_att1",
    "desk_rnn_att2",
    "desk_conv",
    "desk_transformer",
];

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self, NmtError> {
        use AttentionKind::*;
        let base = Self::default();
        let rnn = |layers, units, attention, epochs| Self {
            num_layers: layers,
            hidden_units: units,
            embed_dim: units,
            attention,
            max_epochs: epochs,
            ..base.clone()
        };
        let desk_rnn = |attention| Self {
            optimizer: OptimizerKind::Adam,
            lr: 0.003,
            dropout: 0.1,
            batch_size: 4,
            max_epochs: 200,
            patience: 50,
            ..rnn(2, 128, attention, 200)
        };
        Ok(match name {
            "nspm" => rnn(2, 128, None, steps_to_epochs(50_000)),
            "nspm_att1" => rnn(2, 128, GlobalAdditive, steps_to_epochs(50_000)),
            "nspm_att2" => rnn(2, 128, LocalMultiplicative, steps_to_epochs(50_000)),
            "gnmt4" | "gnmt8" => Self {
                bidirectional_first: true,
                residual_from_layer: Some(3),
                ..rnn(if name == "gnmt4" { 4 } else { 8 }, 1024, GlobalAdditive, steps_to_epochs(30_000))
            },
            "lstm_luong" => Self {
                optimizer: OptimizerKind::Adam,
                lr: 0.001,
                dropout: 0.3,
                ..rnn(4, 1000, LocalMultiplicative, 500)
            },
            "convs2s" => Self {
                architecture: Architecture::Conv,
                num_layers: 15,
                hidden_units: 512,
                embed_dim: 512,
                conv_layout: Some("512x3*9,1024x3*4,2048x1*2".into()),
                lr: 0.5,
                max_epochs: 500,
                ..base.clone()
            },
            "transformer" => Self {
                architecture: Architecture::Transformer,
                num_layers: 6,
                hidden_units: 1024,
                embed_dim: 1024,
                heads: 16,
                optimizer: OptimizerKind::Adam,
                lr: 0.0005,
                dropout: 0.3,
                max_epochs: 500,
                ..base.clone()
            },
            "desk_rnn" => desk_rnn(None),
            "desk_rnn_att1" => desk_rnn(GlobalAdditive),
            "desk_rnn_att2" => desk_rnn(LocalMultiplicative),
            "desk_conv" => Self {
                architecture: Architecture::Conv,
                num_layers: 4,
                hidden_units: 128,
                embed_dim: 128,
                optimizer: OptimizerKind::Adam,
                lr: 0.002,
                dropout: 0.1,
                batch_size: 16,
                max_epochs: 200,
                patience: 30,
                ..base.clone()
            },
            "desk_transformer" => Self {
                architecture: Architecture::Transformer,
                num_layers: 2,
                hidden_units: 128,
                embed_dim: 128,
                heads: 4,
                optimizer: OptimizerKind::Adam,
                lr: 0.001,
                dropout: 0.1,
                batch_size: 16,
                max_epochs: 200,
                patience: 30,
                ..base
            },
            _ => return Err(NmtError::Config(format!("unknown preset `{name}`"))),
        })
    }

    pub fn conv_layers(&self) -> Result<Vec<ConvLayer>, NmtError> {
        match &self.conv_layout {
            Some(s) => parse_conv_layout(s),
            None => Ok(vec![ConvLayer { channels: self.hidden_units, width: self.kernel_width }; self.num_layers]),
        }
    }

    pub fn validate(&self) -> Result<(), NmtError> {
        let bad = |m: String| Err(NmtError::Config(m));
        if self.num_layers == 0 || self.hidden_units == 0 || self.embed_dim == 0 {
            return bad("layers, hidden_units and embed_dim must be positive".into());
        }
        if let Some(r) = self.residual_from_layer {
            if r < 3 {
                return bad(format!("residual_from_layer must be at least 3, got {r}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("invalid lr {}", self.lr));
        }
        if self.batch_size == 0 || self.beam_width == 0 || self.max_len == 0 || self.patience == 0 {
            return bad("batch_size, beam_width, max_len and patience must be positive".into());
        }
        if self.local_window == 0 {
            return bad("local_window must be positive".into());
        }
        match self.architecture {
            Architecture::Rnn => {}
            Architecture::Conv => {
                for l in self.conv_layers()? {
                    if l.width % 2 == 0 || l.channels == 0 {
                        return bad(format!("conv layer {}x{} needs an odd kernel width", l.channels, l.width));
                    }
                }
            }
            Architecture::Transformer => {
                if self.heads == 0 || self.hidden_units % self.heads != 0 {
                    return bad(format!("{} heads do not divide {} units", self.heads, self.hidden_units));
                }
                if self.embed_dim != self.hidden_units {
                    return bad("transformer needs embed_dim == hidden_units".into());
                }
            }
        }
        if self.architecture != Architecture::Rnn && self.attention != AttentionKind::None {
            return bad("attention kind applies to rnn models only".into());
        }
        Ok(())
    }

    /// `key = value` pairs in a fixed order; `set` accepts every key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("architecture", self.architecture.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("hidden_units", self.hidden_units.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("attention", self.attention.to_string()),
            ("bidirectional_first", self.bidirectional_first.to_string()),
            ("residual_from_layer", self.residual_from_layer.map_or("none".into(), |r| r.to_string())),
            ("heads", self.heads.to_string()),
            ("kernel_width", self.kernel_width.to_string()),
            ("conv_layout", self.conv_layout.clone().unwrap_or_else(|| "none".into())),
            ("local_window", self.local_window.to_string()),
            ("dropout", self.dropout.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("max_len", self.max_len.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Returns `Ok(false)` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, NmtError> {
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N, NmtError> {
            v.parse().map_err(|_| NmtError::Config(format!("{key}: cannot parse `{v}`")))
        }
        let opt = |v: &str| -> Option<String> { (v != "none" && !v.is_empty()).then(|| v.to_string()) };
        match key {
            "architecture" => self.architecture = value.parse()?,
            "num_layers" => self.num_layers = num(key, value)?,
            "hidden_units" => self.hidden_units = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "attention" => self.attention = value.parse()?,
            "bidirectional_first" => self.bidirectional_first = num(key, value)?,
            "residual_from_layer" => self.residual_from_layer = opt(value).map(|v| num(key, &v)).transpose()?,
            "heads" => self.heads = num(key, value)?,
            "kernel_width" => self.kernel_width = num(key, value)?,
            "conv_layout" => self.conv_layout = opt(value),
            "local_window" => self.local_window = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "beam_width" => self.beam_width = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "max_positions" => self.max_positions = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, NmtError> {
        let mut c = Self::default();
        for (k, v) in entries {
            if !c.set(k, v)? {
                return Err(NmtError::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_three_rows() {
        let n = ModelConfig::preset("nspm").unwrap();
        assert_eq!((n.num_layers, n.hidden_units, n.attention, n.optimizer, n.lr, n.dropout), (2, 128, AttentionKind::None, OptimizerKind::Sgd, 1.0, 0.2));
        assert_eq!(n.max_epochs, 417);
        let g = ModelConfig::preset("gnmt4").unwrap();
        assert!(g.bidirectional_first);
        assert_eq!((g.num_layers, g.hidden_units, g.residual_from_layer, g.max_epochs), (4, 1024, Some(3), 250));
        assert_eq!(ModelConfig::preset("gnmt8").unwrap().num_layers, 8);
        let l = ModelConfig::preset("lstm_luong").unwrap();
        assert_eq!((l.num_layers, l.hidden_units, l.optimizer, l.lr, l.dropout), (4, 1000, OptimizerKind::Adam, 0.001, 0.3));
        let c = ModelConfig::preset("convs2s").unwrap();
        let layers = c.conv_layers().unwrap();
        assert_eq!(layers.len(), 15);
        assert_eq!(layers[0], ConvLayer { channels: 512, width: 3 });
        assert_eq!(layers[9], ConvLayer { channels: 1024, width: 3 });
        assert_eq!(layers[14], ConvLayer { channels: 2048, width: 1 });
        assert_eq!((c.lr, c.dropout), (0.5, 0.2));
        let t = ModelConfig::preset("transformer").unwrap();
        assert_eq!((t.num_layers, t.hidden_units, t.lr, t.dropout), (6, 1024, 0.0005, 0.3));
        for p in PRESETS {
            ModelConfig::preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn entries_roundtrip() {
        for p in ["gnmt8", "convs2s", "desk_transformer"] {
            let c = ModelConfig::preset(p).unwrap();
            let e = c.entries();
            let back = ModelConfig::from_entries(e.iter().map(|(k, v)| (*k, v.as_str()))).unwrap();
            assert_eq!(back, c);
        }
        assert!(ModelConfig::from_entries([("colour", "red")]).is_err());
    }

    #[test]
    fn invariants() {
        let mut c = ModelConfig { residual_from_layer: Some(2), ..Default::default() };
        assert!(c.validate().is_err());
        c.residual_from_layer = Some(3);
        assert!(c.validate().is_ok());
        let t = ModelConfig { architecture: Architecture::Transformer, heads: 3, ..Default::default() };
        assert!(t.validate().is_err());
        let k = ModelConfig { architecture: Architecture::Conv, kernel_width: 4, ..Default::default() };
        assert!(k.validate().is_err());
    }
}
