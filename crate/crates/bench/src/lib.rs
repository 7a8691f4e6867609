pub use nsc_core;
