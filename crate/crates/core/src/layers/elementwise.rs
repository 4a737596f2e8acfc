use crate::error::{Error, Result};
use crate::tensor::{max_value, AccTensor, Dims, QuantTensor};

/// Second operand of the adder array.
#[derive(Clone, Copy, Debug)]
pub enum Addend<'a> {
    Tensor(&'a AccTensor),
    PerChannel(&'a [i32]),
}

/// Exact integer addition of a tensor or a per-channel bias.
pub fn adder_array(acc: &AccTensor, addend: Addend<'_>) -> Result<AccTensor> {
    let dims = acc.dims();
    let plane = dims.plane().max(1);
    let other = |i: usize| -> i32 {
        match addend {
            Addend::Tensor(t) => t.data()[i],
            Addend::PerChannel(bias) => bias[i / plane],
        }
    };
    match addend {
        Addend::Tensor(t) if t.dims() != dims => {
            return Err(Error::Shape(format!("cannot add {} to {dims}", t.dims())));
        }
        Addend::PerChannel(bias) if bias.len() != dims.channels => {
            return Err(Error::Shape(format!(
                "{} biases for {} channels",
                bias.len(),
                dims.channels
            )));
        }
        _ => {}
    }
    let data = acc
        .data()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            a.checked_add(other(i))
                .ok_or_else(|| Error::Overflow(format!("element {i}: {a} + {}", other(i))))
        })
        .collect::<Result<Vec<_>>>()?;
    AccTensor::new(dims, data)
}

fn upsample<T: Copy>(dims: Dims, data: &[T], factor: usize) -> Result<(Dims, Vec<T>)> {
    if factor == 0 {
        return Err(Error::InvalidInput("upsample factor 0".into()));
    }
    let out = Dims::new(dims.channels, dims.height * factor, dims.width * factor);
    let mut values = Vec::with_capacity(out.len());
    for c in 0..out.channels {
        for y in 0..out.height {
            let row = &data[dims.index(c, y / factor, 0)..][..dims.width];
            for x in 0..out.width {
                values.push(row[x / factor]);
            }
        }
    }
    Ok((out, values))
}

/// Nearest-neighbour upsampling: every pixel becomes a `factor × factor` tile.
pub fn upsample_nearest(input: &QuantTensor, factor: usize) -> Result<QuantTensor> {
    let (dims, data) = upsample(input.dims(), input.data(), factor)?;
    QuantTensor::new(dims, input.bits(), data)
}

pub fn upsample_nearest_acc(input: &AccTensor, factor: usize) -> Result<AccTensor> {
    let (dims, data) = upsample(input.dims(), input.data(), factor)?;
    AccTensor::new(dims, data)
}

/// `round(index / (extent − 1) · (2^J − 1))`, rounding half up; 0 when extent is 1.
pub(crate) fn coordinate(index: usize, extent: usize, bits: u8) -> u16 {
    if extent <= 1 {
        return 0;
    }
    let span = (extent - 1) as u64;
    let top = u64::from(max_value(bits));
    ((2 * index as u64 * top + span) / (2 * span)) as u16
}

/// Appends an x-coordinate channel and a y-coordinate channel.
pub fn coord_embed(input: &QuantTensor) -> Result<QuantTensor> {
    let dims = input.dims();
    if dims.height == 0 || dims.width == 0 {
        return Err(Error::Shape(format!("coordinate embedding of empty plane {dims}")));
    }
    let bits = input.bits();
    let mut data = input.data().to_vec();
    data.reserve(2 * dims.plane());
    for _y in 0..dims.height {
        data.extend((0..dims.width).map(|x| coordinate(x, dims.width, bits)));
    }
    for y in 0..dims.height {
        let v = coordinate(y, dims.height, bits);
        data.extend(std::iter::repeat_n(v, dims.width));
    }
    QuantTensor::new(Dims::new(dims.channels + 2, dims.height, dims.width), bits, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_zero_and_bias() {
        let x = AccTensor::new(Dims::new(2, 1, 2), vec![1, -2, 3, 4]).unwrap();
        let zero = AccTensor::zeros(x.dims());
        assert_eq!(adder_array(&x, Addend::Tensor(&zero)).unwrap(), x);

        let z = AccTensor::zeros(Dims::new(2, 1, 1));
        assert_eq!(adder_array(&z, Addend::PerChannel(&[1, 2])).unwrap().data(), &[1, 2]);
    }

    #[test]
    fn add_errors() {
        let x = AccTensor::new(Dims::new(1, 1, 1), vec![i32::MAX]).unwrap();
        assert!(matches!(adder_array(&x, Addend::PerChannel(&[1])), Err(Error::Overflow(_))));
        assert!(matches!(adder_array(&x, Addend::PerChannel(&[1, 2])), Err(Error::Shape(_))));
        let y = AccTensor::zeros(Dims::new(1, 2, 1));
        assert!(matches!(adder_array(&x, Addend::Tensor(&y)), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_examples() {
        let t = QuantTensor::new(Dims::new(1, 1, 1), 8, vec![9]).unwrap();
        assert_eq!(upsample_nearest(&t, 2).unwrap().data(), &[9; 4]);
        assert_eq!(upsample_nearest(&t, 1).unwrap(), t);
        assert!(upsample_nearest(&t, 0).is_err());

        let t = QuantTensor::new(Dims::new(1, 2, 2), 8, vec![1, 2, 3, 4]).unwrap();
        let up = upsample_nearest(&t, 2).unwrap();
        assert_eq!(up.data(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
    }

    #[test]
    fn coordinates() {
        assert_eq!(coordinate(0, 3, 8), 0);
        assert_eq!(coordinate(1, 3, 8), 128);
        assert_eq!(coordinate(2, 3, 8), 255);
        assert_eq!(coordinate(0, 1, 8), 0);
        // 1/3·255 = 85 exactly, 2/3·255 = 170
        assert_eq!(coordinate(1, 4, 8), 85);
        assert_eq!(coordinate(2, 4, 8), 170);
    }

    #[test]
    fn coord_embed_examples() {
        let t = QuantTensor::zeros(Dims::new(126, 2, 3), 8).unwrap();
        let e = coord_embed(&t).unwrap();
        assert_eq!(e.dims().channels, 128);
        assert_eq!(e.channel(126), &[0, 128, 255, 0, 128, 255]);
        assert_eq!(e.channel(127), &[0, 0, 0, 255, 255, 255]);

        let t = QuantTensor::new(Dims::new(1, 1, 1), 8, vec![42]).unwrap();
        assert_eq!(coord_embed(&t).unwrap().data(), &[42, 0, 0]);
    }
}
