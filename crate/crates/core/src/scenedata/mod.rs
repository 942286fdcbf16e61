//! Scenes, proposals, vocabulary, word embeddings and augmentation.

mod augment;
mod embedding;
mod scene;
mod vocab;

pub use augment::{augment_scene, augment_scene_with, AugmentParams};
pub use embedding::{embeddings_from_str, load_embeddings, save_embeddings, EmbeddingTable, EMBEDDING_DIM};
pub use scene::{
    load_dataset, load_scene, save_scene, Detection, ObjectRecord, ProposalSet, ProposalSource, Scene, FEATURE_DIM,
    MAX_PROPOSALS, NUM_CLASSES, POINT_WIDTH,
};
pub use vocab::{
    build_vocabulary, encode_caption, tokenize, TokenSequence, Vocabulary, EOS, MAX_CAPTION_TOKENS, PAD, RESERVED, SOS,
    UNK,
};
