//! Weight compilers: explicit transformer parameters that execute EM and
//! tensor power iteration, and the ReLU approximators they are built from.

pub mod em_tf;
pub mod relu_approx;
pub mod tensor_tf;

pub use em_tf::{
    build_em_tf_weights, em_readout, encode_em_input, max_param_deviation, run_tf_em, run_tf_em_with, EmLayout,
    EmTfConfig, TfEmRun,
};
pub use relu_approx::{build_relu_approx, build_relu_approx_tight, Piece, ReluScalarApprox, Target};
pub use tensor_tf::{
    build_tensor_power_tf, decode_tensor_input, encode_tensor_input, max_relative_deviation, run_tf_tensor_power,
    run_tf_tensor_power_with, PowerMode, TensorLayout, OVERFLOW_LIMIT,
};
