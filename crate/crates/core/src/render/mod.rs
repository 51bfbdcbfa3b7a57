//! View rendering: point splats, mesh rasterization, normals and channel
//! composition.

mod compose;
mod export;
mod grid;
mod normals;
mod raster;
mod splat;

pub use compose::{
    compose_view, decode_depth, decode_normal, encode_depth, encode_normal, ChannelConfig, ChannelSource,
    LabelSource, RenderOptions, RenderedView, DEFAULT_RENDER_RANGE, DEPTH_ENCODING_RANGE,
};
pub use export::{
    dequantize, interleave, quantize, read_channels_png, read_label_png, write_channels_png, write_label_png,
    write_view_png,
};
pub use grid::Grid;
pub use normals::{estimate_point_normals, plane_normal, DEFAULT_NORMAL_K};
pub use raster::{rasterize_mesh, MeshRaster, NEAR_CLIP, NO_TRIANGLE};
pub use splat::{footprint, point_size_for_width, splat_points, DepthRange, PointSplat, HD_POINT_SIZE, NO_POINT};
