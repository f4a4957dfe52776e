//! Images, procedural datasets and their on-disk formats.

mod image;
mod manifest;
mod png_io;
mod synth;

pub use image::Image;
pub use manifest::{
    load_dataset, read_manifest, sha256_hex, write_dataset, DatasetManifest, FileEntry,
    MANIFEST_FILE,
};
pub use png_io::{
    byte_to_value, encode_png, image_to_raw, load_image, raw_to_image, read_png, save_image,
    value_to_byte, write_png, RawPixels,
};
pub use synth::{generate_dataset, split, toy_face_eye_boxes, DatasetSpec, Family};
