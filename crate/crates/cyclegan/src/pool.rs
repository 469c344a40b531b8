use rand::Rng;
use stainlab_autodiff::Tensor;

/// History of generated images shown to a discriminator. Once full, each query
/// returns a stored image half of the time and stores the new one in its place.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            images: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn query(&mut self, image: Tensor, rng: &mut impl Rng) -> Tensor {
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.images[i], image)
        } else {
            image
        }
    }
}
