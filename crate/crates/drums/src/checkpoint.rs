//! Codec ("GDC1") and model ("GDM1") checkpoints in the tensor container.

use std::path::Path;

use gesture_drums_core::codec::{CodecConfig, NeuralCodec};
use gesture_drums_core::model::{MaskedTransformer, ModelConfig};
use gesture_drums_core::nn::ParamStore;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};

pub const CODEC_MAGIC: &[u8; 4] = b"GDC1";
pub const MODEL_MAGIC: &[u8; 4] = b"GDM1";

const CODEWORDS: &str = "rvq.codewords";

fn named_tensors(params: &ParamStore) -> Vec<Tensor> {
    params
        .specs()
        .iter()
        .map(|s| Tensor { name: s.name.clone(), rows: s.rows, cols: s.cols, values: params.data()[s.range()].to_vec() })
        .collect()
}

/// Gathers the tensors named by `layout` into one buffer in layout order.
fn gather(container: &Container, layout: &ParamStore) -> Result<Vec<f32>> {
    let mut flat = Vec::with_capacity(layout.data().len());
    for s in layout.specs() {
        let t = container.tensor(&s.name)?;
        if (t.rows, t.cols) != (s.rows, s.cols) {
            return Err(Error::data(format!(
                "tensor `{}` is {}×{}, config expects {}×{}",
                s.name, t.rows, t.cols, s.rows, s.cols
            )));
        }
        flat.extend_from_slice(&t.values);
    }
    Ok(flat)
}

fn write(path: &Path, container: &Container) -> Result<()> {
    std::fs::write(path, container.to_bytes()).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn read(path: &Path, magic: &[u8; 4]) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Container::from_bytes(&bytes, magic).map_err(|e| Error::data(format!("{}: {}", path.display(), e.message)))
}

pub fn codec_container(codec: &NeuralCodec) -> Container {
    let cfg = codec.config();
    let mut tensors = named_tensors(codec.params());
    tensors.push(Tensor {
        name: CODEWORDS.into(),
        rows: cfg.codebooks * cfg.codebook_size,
        cols: cfg.latent_dim,
        values: codec.quantizer().embeddings().to_vec(),
    });
    Container { magic: *CODEC_MAGIC, config: toml::to_string(cfg).expect("codec config is TOML"), tensors }
}

pub fn codec_from_container(c: &Container) -> Result<NeuralCodec> {
    let config: CodecConfig = toml::from_str(&c.config).map_err(|e| Error::data(format!("codec config block: {}", e.message())))?;
    let layout = NeuralCodec::param_layout(&config)?;
    let weights = gather(c, &layout)?;
    let words = c.tensor(CODEWORDS)?;
    if (words.rows, words.cols) != (config.codebooks * config.codebook_size, config.latent_dim) {
        return Err(Error::data("codeword table does not match the codec config"));
    }
    Ok(NeuralCodec::from_parts(config, &weights, words.values.clone())?)
}

pub fn save_codec(path: impl AsRef<Path>, codec: &NeuralCodec) -> Result<()> {
    if !codec.is_trained() {
        return Err(Error::data("refusing to save an untrained codec"));
    }
    write(path.as_ref(), &codec_container(codec))
}

pub fn load_codec(path: impl AsRef<Path>) -> Result<NeuralCodec> {
    codec_from_container(&read(path.as_ref(), CODEC_MAGIC)?)
}

pub fn model_container(model: &MaskedTransformer) -> Container {
    Container {
        magic: *MODEL_MAGIC,
        config: toml::to_string(model.config()).expect("model config is TOML"),
        tensors: named_tensors(model.params()),
    }
}

pub fn model_from_container(c: &Container) -> Result<MaskedTransformer> {
    let config: ModelConfig = toml::from_str(&c.config).map_err(|e| Error::data(format!("model config block: {}", e.message())))?;
    let mut model = MaskedTransformer::zeroed(config)?;
    let flat = gather(c, model.params())?;
    model.params_mut().load(&flat)?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &MaskedTransformer) -> Result<()> {
    write(path.as_ref(), &model_container(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MaskedTransformer> {
    model_from_container(&read(path.as_ref(), MODEL_MAGIC)?)
}
