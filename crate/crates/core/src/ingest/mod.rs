//! Data ingestion: KITTI velodyne scans and labels, synthetic scenes and
//! config files.

mod bin;
mod config_io;
mod labels;
mod scene;

pub use bin::{read_point_bin, write_point_bin};
pub use config_io::{config_to_string, load_config, parse_config, save_config};
pub use labels::{
    parse_labels, read_labels, to_lidar_box, CameraToLidar, LabelRecord, KNOWN_CLASSES,
};
pub use scene::{generate_scene, ObjectTemplate, SceneSpec, CYCLIST_SIZE};
