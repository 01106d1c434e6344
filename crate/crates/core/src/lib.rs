//! Word spotting with PHOC attribute prediction.
//!
//! Word images are mapped by a convolutional network with spatial pyramid
//! pooling onto pyramidal histograms of characters (PHOCs); retrieval then
//! ranks images by Bray-Curtis dissimilarity between predicted vectors
//! (query by example) or between predictions and the PHOC of a query
//! string (query by string).

pub mod nn;
pub mod phoc;
pub mod model;
pub mod train;
pub mod augment;
pub mod data;
pub mod predictions;
pub mod retrieval;
