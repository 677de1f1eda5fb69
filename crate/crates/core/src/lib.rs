pub mod autodiff;
pub mod codec;
pub mod common_info;
pub mod error;
pub mod evaluation;
pub mod pmf;
pub mod range_coder;
pub mod rate_distortion;
pub mod source_gen;

pub use common_info::{BoundCheckReport, CommonInfoResult};
pub use error::{Error, Result};
pub use pmf::{JointPmf, Pmf};
pub use rate_distortion::{BaOptions, DistortionMatrix, RDCurve, RDPoint};
pub use codec::{Arch, ChannelCodes, Codec, CodecConfig, TrainOptions};
pub use evaluation::{GWRatePoint, RateKind};
