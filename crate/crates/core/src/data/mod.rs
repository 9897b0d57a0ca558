//! Datasets, file formats, preprocessing and batching.

pub mod batch;
pub mod cifar;
pub mod dataset;
pub mod folder;
pub mod pgm;
pub mod synthetic;

pub use batch::{
    channel_stats, for_each_prefetched, hflip, make_batches, pad_crop, resize_bilinear, Batch, BatchIter, Preproc,
    CIFAR100_MEAN, CIFAR100_STD,
};
pub use cifar::{load_cifar100, load_record_dir, write_corpus, write_records};
pub use dataset::{Dataset, Split};
pub use folder::load_pgm_folder;
pub use synthetic::{class_template, synthetic_dataset, SyntheticSpec};
