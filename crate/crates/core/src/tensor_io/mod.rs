//! Interchange format: binary tensor files plus a JSON Lines manifest.

mod manifest;
mod tensor;

pub use manifest::{
    load_manifest, write_manifest, CandidateRecord, EmbeddingRole, EvaluationSet, ExampleRecord,
    MANIFEST_SCHEMA_VERSION,
};
pub use tensor::{
    read_header, read_tensor, write_tensor, DType, Tensor, TensorData, TensorHeader,
    FORMAT_VERSION, MAGIC, MAX_RANK,
};
