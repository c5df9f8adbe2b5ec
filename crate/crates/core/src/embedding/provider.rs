use std::path::Path;
use std::process::Command;

use image::imageops::FilterType;
use image::DynamicImage;

use super::{ChannelMode, EmbeddingError, EmbeddingRecord, ProviderSpec};
use crate::RegionTag;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("failed to launch provider `{cmd}`: {source}")]
    Launch { cmd: String, source: std::io::Error },
    #[error("provider `{cmd}` exited with {status}: {stderr}")]
    Failed { cmd: String, status: std::process::ExitStatus, stderr: String },
    #[error("provider output unusable: {0}")]
    BadOutput(String),
    #[error("provider returned {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A user-supplied feature extractor run as a subprocess:
/// `<cmd> --in <crop.png> --region <tag>`, answering on stdout with the
/// dimension followed by that many whitespace-separated values.
#[derive(Debug, Clone)]
pub struct ExternalProvider {
    program: String,
    args: Vec<String>,
    pub spec: ProviderSpec,
}

impl ExternalProvider {
    /// `command` is split on whitespace; the first word is the program.
    pub fn new(command: &str, spec: ProviderSpec) -> Result<Self, ProviderError> {
        let mut words = command.split_whitespace().map(String::from);
        let program = words
            .next()
            .ok_or_else(|| ProviderError::BadOutput("empty provider command".into()))?;
        Ok(ExternalProvider {
            program,
            args: words.collect(),
            spec,
        })
    }

    fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Runs the provider on an already prepared crop file.
    pub fn embed_file(&self, crop: &Path, region: RegionTag) -> Result<Vec<f64>, ProviderError> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg("--in")
            .arg(crop)
            .arg("--region")
            .arg(region.as_str())
            .output()
            .map_err(|source| ProviderError::Launch {
                cmd: self.command_line(),
                source,
            })?;
        if !out.status.success() {
            return Err(ProviderError::Failed {
                cmd: self.command_line(),
                status: out.status,
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        parse_provider_output(&String::from_utf8_lossy(&out.stdout), self.spec.dim)
    }

    /// Converts the crop to the provider's channel mode and input side, then
    /// runs the provider on a temporary PNG.
    pub fn embed_image(&self, crop: &DynamicImage, region: RegionTag) -> Result<Vec<f64>, ProviderError> {
        let side = self.spec.input_side;
        let sized = if crop.width() == side && crop.height() == side {
            crop.clone()
        } else {
            crop.resize_exact(side, side, FilterType::Triangle)
        };
        let prepared = match self.spec.channel_mode {
            ChannelMode::Rgb => DynamicImage::ImageRgb8(sized.to_rgb8()),
            ChannelMode::Grayscale => DynamicImage::ImageLuma8(sized.to_luma8()),
        };
        let tmp = tempfile::Builder::new().suffix(".png").tempfile()?;
        prepared.save_with_format(tmp.path(), image::ImageFormat::Png)?;
        self.embed_file(tmp.path(), region)
    }

    pub fn embed_record(
        &self,
        subject_id: &str,
        image_id: &str,
        region: RegionTag,
        crop: &DynamicImage,
    ) -> Result<EmbeddingRecord, ProviderError> {
        let v = self.embed_image(crop, region)?;
        Ok(EmbeddingRecord::new(subject_id, image_id, region, &self.spec.provider_id, v)?)
    }
}

fn parse_provider_output(stdout: &str, expected: usize) -> Result<Vec<f64>, ProviderError> {
    let mut tokens = stdout.split_whitespace();
    let dim: usize = tokens
        .next()
        .ok_or_else(|| ProviderError::BadOutput("empty output".into()))?
        .parse()
        .map_err(|_| ProviderError::BadOutput("first token must be the dimension".into()))?;
    if dim != expected {
        return Err(ProviderError::DimensionMismatch { expected, found: dim });
    }
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|_| ProviderError::BadOutput(format!("non-numeric value `{t}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != dim {
        return Err(ProviderError::DimensionMismatch {
            expected: dim,
            found: values.len(),
        });
    }
    Ok(values)
}
