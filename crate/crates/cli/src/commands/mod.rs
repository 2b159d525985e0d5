pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod sample;
pub mod sweep;
pub mod train;
pub mod train_probes;
