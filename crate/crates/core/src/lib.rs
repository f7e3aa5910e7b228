//! Labels chest radiograph reports and evaluates classifiers trained on them.
//!
//! The text pipeline runs [`tokenizer`], [`tagger`] (with [`decode`]),
//! [`graph`] and [`labeler`], bundled by [`pipeline::Pipeline`]. The other
//! modules work on their own: [`analysis`], [`metrics`], [`rebalance`],
//! [`numerics`] and [`gradcam`].

pub mod analysis;
pub mod decode;
pub mod error;
pub mod format;
pub mod gradcam;
pub mod graph;
pub mod labeler;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod rebalance;
pub mod tagger;
pub mod tokenizer;

pub use error::{Error, Result};

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

book_chapters! {
    book_introduction => "introduction.md",
    book_tokenizing => "tokenizing.md",
    book_tagging => "tagging.md",
    book_graphs => "graphs.md",
    book_labeling => "labeling.md",
    book_analysis => "analysis.md",
    book_metrics => "metrics.md",
    book_rebalancing => "rebalancing.md",
    book_numerics => "numerics.md",
    book_gradcam => "gradcam.md",
}
