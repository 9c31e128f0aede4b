//! Comparison systems: page-granular dirty tracking, whole-module swapping
//! and unmanaged RAM checkpointing.

mod managed_state;
mod module_swap;
mod unmanaged;

pub use managed_state::{
    AccessMode, ManagedStatePool, MsError, MsToken, HEADER_BYTES as MS_HEADER_BYTES, PAGE_SIZES,
};
pub use module_swap::{ModuleSwapApp, MODULE_SIZE};
pub use unmanaged::UnmanagedRam;
