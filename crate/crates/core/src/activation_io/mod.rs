//! Activation storage: the RACT tensor format and the dataset manifest.

mod manifest;
mod tensor;

pub use manifest::{
    load_pair, read_text_lines, Manifest, TaskEntry, TensorCache, DEFAULT_FILE_PATTERN,
};
pub use tensor::{
    decode_tensor, encode_tensor, read_header, read_tensor, write_tensor, DType, TensorHeader,
    HEADER_LEN, MAGIC, VERSION,
};
