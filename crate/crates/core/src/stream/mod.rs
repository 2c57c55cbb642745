//! Typed HLS streams: the per-subroutine type registry written by the
//! preprocessor, and lowering of stream subroutine calls to fifo primitives.

mod lower;
mod registry;

pub use lower::{classify_stream_symbol, lower_streams, StreamError, StreamOp, StreamReport};
pub use registry::{stream_type, stream_types, RegistryError, StreamType, StreamTypeRegistry};
