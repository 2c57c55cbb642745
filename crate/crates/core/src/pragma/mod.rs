//! Pragma descriptors, their placeholder encoding, and lowering of
//! placeholder calls to back-end constructs.

mod descriptor;
mod intrinsic_map;
mod lower;

pub use descriptor::{
    decode_placeholder, encode_placeholder, has_placeholder_prefix, valid_key, valid_value, DecodeError, EncodeError,
    PragmaDescriptor, PragmaKind, PragmaScope, SourceLocation, DEFAULT_PREFIX, MAX_NAME_LEN,
};
pub use intrinsic_map::{Construct, IntrinsicMap, MapError, MarkerOperand, StreamPrimitives, TemplateError};
pub use lower::{
    is_placeholder_symbol, lower_pragmas, Anchor, LoweredPragma, PragmaError, PragmaOptions, PragmaReport,
};
