//! Site selection, calibration, QAT finalization, integer inference and
//! compression accounting.

mod calibrate;
mod compression;
mod integer;
mod qforward;
mod sites;

pub use calibrate::{
    check_calibrated, is_calibrated, ptq_calibrate, qat_finalize, simulation_parts, CalibrationOptions,
    ATTR_CALIBRATED, ATTR_CALIBRATION_STEPS,
};
pub use compression::{compression_report, CompressionReport, TensorBytes};
pub use integer::{integer_linear, Requantizer, MAX_INNER};
pub use qforward::{QuantizedModel, Trace};
pub use sites::{build_site_map, build_site_map_with, MatmulSite, QuantSiteMap, Site, SiteKind};

use crate::error::Result;
use crate::io::Checkpoint;

/// Opens a quantized checkpoint for inference, refusing uncalibrated ones
/// unless `allow_uncalibrated` is set.
pub fn load_quantized(ck: &Checkpoint, allow_uncalibrated: bool) -> Result<QuantizedModel> {
    check_calibrated(ck, allow_uncalibrated)?;
    QuantizedModel::from_checkpoint(ck)
}

#[cfg(test)]
mod tests;
