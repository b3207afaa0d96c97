//! Numerical laboratory for zero-delay transmission of `M` correlated
//! Gaussian sources over a Gaussian multiple-access channel.
//!
//! The crate covers four layers:
//!
//! * [`model`] — the symmetric multivariate source, its spectrum, sampling
//!   and Gaussian conditioning;
//! * [`bounds`] / [`uncoded`] — the distortion lower bound from the
//!   source-channel separation argument, and the linear (uncoded) baseline
//!   that attains it below the water-filling threshold SNR;
//! * [`codec`] — the DQLC encoders, channel, sequential decoder and the
//!   analytic channel-output densities;
//! * [`analysis`] — closed-form/one-integral distortion and power
//!   calculus, high-SNR loss expressions and the parameter optimizer.

pub mod analysis;
pub mod bounds;
pub mod codec;
pub mod math;
pub mod model;
pub mod uncoded;

pub use analysis::{
    anomalous_distortion_m, anomaly_prob_m, channel_distortion_m, clipping_distortion,
    distortion_m3, high_snr_design, high_snr_loss_db, loss_vs_m_curve, optimize_m3,
    power_encoder_analog, power_encoder_digital, quantization_distortion, quantizer_power,
    solve_xi_m3, AnalysisError, DistortionReport, LossPoint, OptimizeOptions, Reconstructor,
    B_DEFAULT,
};
pub use bounds::{
    distortion_lower_bound, high_snr_bound, mac_capacity, rd_waterfill, sdr_upper_bound_db,
    theta_for_power, waterfill_threshold_snr, BoundCurve, BoundError, BoundRegime,
    WaterfillSolution,
};
pub use codec::{
    channel, channel_output_pdf, decode_sequential, encode_analog, encode_digital,
    nearest_centroid, quantize, reconstruct, residual_pdf_clipped, residual_pdf_clipped_closed,
    residual_pdf_gaussian, segment_geometry, sigma_aa_b, vartheta, ChannelOutputPdf, CodecError,
    DecodeResult, DqlcParams, QuantizerStyle, Regime, SegmentGeometry,
};
pub use model::{ModelError, PartitionedGaussian, SourceModel, Spectrum, RNG_ALGORITHM};
pub use uncoded::{
    decode_mmse_linear, distortion_uncoded, encode_linear, mmse_coefficient, sdr_uncoded_db,
};
