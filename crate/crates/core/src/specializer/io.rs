//! Model files: `ASPM`, u32 version, u32 header length, a JSON header, then
//! every layer's weights and biases as little-endian f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Activation, Network};
use super::{LossKind, SpecializerConfig, SpecializerModel};
use crate::corpus::AspectId;
use crate::embedding::{read_f32s, write_f32s};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ASPM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    aspect: AspectId,
    loss_kind: LossKind,
    widths: Vec<usize>,
    activation: Activation,
    residual: bool,
    normalize_input: bool,
    seed: u64,
    hyperparams: SpecializerConfig,
}

impl SpecializerModel {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            format_version: MODEL_VERSION,
            aspect: self.aspect.clone(),
            loss_kind: self.loss_kind,
            widths: self.network.widths().to_vec(),
            activation: self.network.activation(),
            residual: self.network.residual(),
            normalize_input: self.network.normalize_input(),
            seed: self.config.seed,
            hyperparams: self.config.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let params: Vec<f32> = self.network.params().iter().map(|&p| p as f32).collect();
        write_f32s(&mut out, &params)?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        if &word != MODEL_MAGIC {
            return Err(Error::Format("not a specializer model file".into()));
        }
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        input.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("model header: {e}")))?;
        if header.widths.len() < 2 || header.widths.contains(&0) {
            return Err(Error::Format("invalid layer widths".into()));
        }
        if header.residual && header.widths[0] != header.widths[header.widths.len() - 1] {
            return Err(Error::Format(
                "residual model with unequal input and output width".into(),
            ));
        }
        let n: usize = header.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = vec![0f32; n];
        read_f32s(&mut input, &mut params)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        let params = params.into_iter().map(f64::from).collect();
        let network = Network::from_parts(
            header.widths,
            params,
            header.activation,
            header.residual,
            header.normalize_input,
        )
        .ok_or_else(|| Error::Format("parameter count mismatch".into()))?;
        Ok(SpecializerModel {
            aspect: header.aspect,
            loss_kind: header.loss_kind,
            network,
            config: header.hyperparams,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
