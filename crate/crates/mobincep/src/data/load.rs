//! Directory-per-class dataset loading.
//!
//! Layout: `root/<class>/<image files>` for one domain, or
//! `root/<domain>/<class>/<image files>` for several. Classes and files are
//! ordered lexicographically for determinism. PNG, JPEG, BMP and TIFF are
//! accepted; grayscale files stay single-channel until preprocessing.

use std::path::Path;

use image::DynamicImage;

use super::{DomainDataset, ImageData, LabeledImage};
use crate::error::Error;
use crate::Result;

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tiff"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            EXTENSIONS.contains(&e.as_str()) || e == "tif"
        })
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path, dirs_only: bool) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read `{}`: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| if dirs_only { p.is_dir() } else { p.is_file() })
        .collect();
    entries.sort();
    Ok(entries)
}

fn decode(path: &Path) -> Result<ImageData> {
    let img = image::open(path)?;
    let (data, channels) = match &img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA8(_) => {
            let gray = img.to_luma8();
            (
                gray.into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 255.0)
                    .collect::<Vec<f32>>(),
                1,
            )
        }
        _ => {
            let rgb = img.to_rgb8();
            (
                rgb.into_raw()
                    .into_iter()
                    .map(|v| v as f32 / 255.0)
                    .collect::<Vec<f32>>(),
                3,
            )
        }
    };
    ImageData::new(img.height() as usize, img.width() as usize, channels, data)
}

/// Load one domain from `root/<class>/<image>`. The domain name is the
/// directory's own name; classes are the sorted subdirectory names.
pub fn load_dataset(root: &Path) -> Result<DomainDataset> {
    let name = root
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("dataset root `{}` has no name", root.display())))?;
    let class_dirs = sorted_entries(root, true)?;
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "`{}` contains no class directories",
            root.display()
        )));
    }

    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut images = Vec::new();
    let mut problems = Vec::new();
    for (class_id, class_dir) in class_dirs.iter().enumerate() {
        let class_name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("class_{class_id}"));
        let files: Vec<_> = sorted_entries(class_dir, false)?
            .into_iter()
            .filter(|p| is_image_file(p))
            .collect();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "class directory `{}` holds no images",
                class_dir.display()
            )));
        }
        for file in files {
            match decode(&file) {
                Ok(image) => images.push(LabeledImage {
                    image,
                    class_id,
                    domain_id: 0,
                    source: file.display().to_string(),
                }),
                Err(e) => problems.push(format!("{}: {e}", file.display())),
            }
        }
        class_names.push(class_name);
    }
    if !problems.is_empty() {
        return Err(Error::DataList(problems));
    }
    Ok(DomainDataset {
        name,
        images,
        class_names,
    })
}

/// Load every domain under `root/<domain>/<class>/<image>`.
pub fn load_multi_domain(root: &Path) -> Result<Vec<DomainDataset>> {
    let domain_dirs = sorted_entries(root, true)?;
    if domain_dirs.is_empty() {
        return Err(Error::Data(format!(
            "`{}` contains no domain directories",
            root.display()
        )));
    }
    domain_dirs.iter().map(|dir| load_dataset(dir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, write_datasets, SynthSpec};

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("mobincep-load-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn synth_write_load_round_trip() {
        let dir = tmpdir("roundtrip");
        let spec = SynthSpec {
            domains: 2,
            classes_per_domain: vec![2, 3],
            images_per_class: 3,
            image_size: 32,
            noise: 0.2,
            seed: 5,
        };
        let datasets = synth_generate(&spec).unwrap();
        write_datasets(&datasets, &dir).unwrap();
        let loaded = load_multi_domain(&dir).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].class_count(), 2);
        assert_eq!(loaded[1].class_count(), 3);
        assert_eq!(loaded[0].len(), 6);
        assert_eq!(loaded[1].len(), 9);
        // 8-bit quantization at generation time makes the PNG round-trip
        // exact
        let orig = &datasets[0].images[0].image;
        let back = &loaded[0].images[0].image;
        assert_eq!(orig.channels, back.channels);
        let max_diff = orig
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff < 1e-6, "png round trip drifted by {max_diff}");
    }

    #[test]
    fn empty_root_is_load_error() {
        let dir = tmpdir("empty");
        assert!(matches!(load_dataset(&dir), Err(Error::Data(_))));
    }

    #[test]
    fn empty_class_directory_is_load_error() {
        let dir = tmpdir("emptyclass");
        std::fs::create_dir_all(dir.join("classA")).unwrap();
        assert!(matches!(load_dataset(&dir), Err(Error::Data(_))));
    }

    #[test]
    fn unreadable_file_reports_itemized_list() {
        let dir = tmpdir("corrupt");
        let class = dir.join("classA");
        std::fs::create_dir_all(&class).unwrap();
        // one valid image and one corrupt file
        let img = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8, y as u8, 0]));
        img.save(class.join("good.png")).unwrap();
        std::fs::write(class.join("bad.png"), b"this is not a png").unwrap();
        match load_dataset(&dir) {
            Err(Error::DataList(items)) => {
                assert_eq!(items.len(), 1);
                assert!(items[0].contains("bad.png"));
            }
            other => panic!("expected itemized error list, got {other:?}"),
        }
    }

    #[test]
    fn mixed_extents_are_accepted_unchanged() {
        // the published sets range from 45x43 up to 1388x1040; sizes pass
        // through untouched at load time
        let dir = tmpdir("extents");
        let class = dir.join("classA");
        std::fs::create_dir_all(&class).unwrap();
        image::RgbImage::from_pixel(43, 45, image::Rgb([10, 20, 30]))
            .save(class.join("small.png"))
            .unwrap();
        image::RgbImage::from_pixel(284, 768, image::Rgb([1, 2, 3]))
            .save(class.join("large.png"))
            .unwrap();
        let ds = load_dataset(&dir).unwrap();
        let mut dims: Vec<(usize, usize)> = ds
            .images
            .iter()
            .map(|i| (i.image.height, i.image.width))
            .collect();
        dims.sort();
        assert_eq!(dims, vec![(45, 43), (768, 284)]);
    }

    #[test]
    fn grayscale_files_stay_single_channel() {
        let dir = tmpdir("gray");
        let class = dir.join("classA");
        std::fs::create_dir_all(&class).unwrap();
        image::GrayImage::from_pixel(32, 32, image::Luma([128]))
            .save(class.join("gray.png"))
            .unwrap();
        let ds = load_dataset(&dir).unwrap();
        assert_eq!(ds.images[0].image.channels, 1);
    }
}
