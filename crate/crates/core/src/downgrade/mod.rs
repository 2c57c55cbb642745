//! Rewrites modern IR into the v7 dialect accepted by the HLS toolchain.
//!
//! `downgrade` = normalize symbols ∘ strip metadata ∘ strip attributes ∘
//! infer pointee types (poison is also replaced by undef). Each step is
//! idempotent, and so is the composition.

mod attributes;
mod metadata;
mod pointee;
mod symbols;
mod whitelist;

use thiserror::Error;

use crate::ir::{Constant, IRModule, MdContent, MdOperand, Value};

pub use attributes::{strip_incompatible_attributes, AttrPosition, AttributeRemoval};
pub use metadata::{strip_nonwhitelisted_metadata, MetadataReport};
pub use pointee::{infer_pointee_types, mangle_type, InferError, InferOptions, InferReport};
pub use symbols::{normalize_symbol_names, RenameMap, SymbolError};
pub use whitelist::{AttributeWhitelist, WhitelistError};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DowngradeError {
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Symbols(#[from] SymbolError),
}

#[derive(Clone, Debug, Default)]
pub struct DowngradeOptions {
    pub infer: InferOptions,
    pub whitelist: AttributeWhitelist,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DowngradeReport {
    pub infer: InferReport,
    pub attributes_removed: Vec<AttributeRemoval>,
    pub metadata: MetadataReport,
    pub renames: RenameMap,
    pub poison_replaced: usize,
}

fn unpoison_value(v: &mut Value, n: &mut usize) {
    if let Value::Const(c) = v {
        unpoison_constant(c, n);
    }
}

fn unpoison_constant(c: &mut Constant, n: &mut usize) {
    match c {
        Constant::Poison => {
            *c = Constant::Undef;
            *n += 1;
        }
        Constant::Array(elems) | Constant::Struct(elems) => {
            elems.iter_mut().for_each(|e| unpoison_value(&mut e.value, n));
        }
        _ => {}
    }
}

/// `poison` does not exist in the v7 dialect; `undef` is its closest
/// (weaker) counterpart.
pub fn replace_poison(m: &mut IRModule) -> usize {
    let mut n = 0;
    for g in &mut m.globals {
        if let Some(init) = &mut g.init {
            unpoison_constant(init, &mut n);
        }
    }
    for f in &mut m.functions {
        for inst in f.instructions_mut() {
            inst.kind.values_mut().into_iter().for_each(|v| unpoison_value(v, &mut n));
        }
    }
    for node in m.metadata.values_mut() {
        if let MdContent::Tuple(ops) = &mut node.content {
            for op in ops {
                if let MdOperand::Value(o) = op {
                    unpoison_value(&mut o.value, &mut n);
                }
            }
        }
    }
    n
}

pub fn downgrade(m: &mut IRModule, opts: &DowngradeOptions) -> Result<DowngradeReport, DowngradeError> {
    let poison_replaced = replace_poison(m);
    let infer = infer_pointee_types(m, &opts.infer)?;
    let attributes_removed = strip_incompatible_attributes(m, &opts.whitelist);
    let metadata = strip_nonwhitelisted_metadata(m, &opts.whitelist);
    let renames = normalize_symbol_names(m)?;
    Ok(DowngradeReport { infer, attributes_removed, metadata, renames, poison_replaced })
}
