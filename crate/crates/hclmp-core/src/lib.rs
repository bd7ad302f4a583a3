//! Composition algebra, spectra curation, and split construction for
//! composition-to-spectrum learning on ternary composition spaces.

pub mod composition;
pub mod dos;
pub mod error;
pub mod grid;
pub mod instance;
pub mod scaler;
pub mod spectra;
pub mod synth;
pub mod ternary;

pub use composition::{classify_against_trio, Composition, Element, ElementTrio, TrioRelation};
pub use dos::{dos_energy_grid, ingest_dos, resample_dos, split_dos_corpus, write_dos_csv, DosRecord, DOS_BINS};
pub use error::CoreError;
pub use grid::{enumerate_simplex_grid, Region};
pub use instance::{
    build_instance, build_random_setting, enumerate_prediction_spaces, identify_data_instances,
    CurationConfig, DataInstance, InstanceManifest, RandomSplit,
};
pub use scaler::Standardizer;
pub use spectra::{EnergyGrid, SpectraTable, SpectrumRecord, CHANNELS};
pub use ternary::{ternary_project, TernaryPoint};
