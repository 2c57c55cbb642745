//! Source-level preprocessing of free-form Fortran: HLS directives become
//! placeholder calls, and the stream macro library is expanded.

mod preprocess;
mod scan;
mod source;

pub use preprocess::{
    expand_stream_macros, parse_directive, preprocess, resolve_stream_calls, rewrite_pragmas, stream_module,
    Preprocessed,
};
pub use source::{Diagnostic, PreprocessError, Severity, SourceUnit};
