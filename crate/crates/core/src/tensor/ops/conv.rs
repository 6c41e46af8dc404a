//! 3x3, stride 1, no padding ("valid") convolution without bias.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Backward, Element, Graph, Tensor, Var};

const KERNEL: usize = 3;
/// Images per partial kernel-gradient sum. Fixed so the reduction order does
/// not depend on the worker count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl Geometry {
    fn ho(&self) -> usize {
        self.h - 2
    }
    fn wo(&self) -> usize {
        self.w - 2
    }
    fn patches(&self) -> usize {
        self.ho() * self.wo()
    }
    fn patch_len(&self) -> usize {
        KERNEL * KERNEL * self.cin
    }
    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }
    fn out_len(&self) -> usize {
        self.patches() * self.cout
    }
}

fn geometry(input: &[usize], kernels: &[usize]) -> Result<Geometry> {
    const OP: &str = "conv2d_valid";
    if input.len() != 4 {
        return Err(Error::Shape {
            op: OP,
            msg: format!("input must be N,H,W,C; got shape {input:?}"),
        });
    }
    if kernels.len() != 4 {
        return Err(Error::Shape {
            op: OP,
            msg: format!("kernels must be 3,3,Cin,Cout; got shape {kernels:?}"),
        });
    }
    for axis in 0..2 {
        if kernels[axis] != KERNEL {
            return Err(Error::Dimension {
                op: OP,
                axis,
                expected: KERNEL,
                actual: kernels[axis],
            });
        }
    }
    for axis in 1..3 {
        if input[axis] < KERNEL {
            return Err(Error::Dimension {
                op: OP,
                axis,
                expected: KERNEL,
                actual: input[axis],
            });
        }
    }
    if kernels[2] != input[3] {
        return Err(Error::Dimension {
            op: OP,
            axis: 3,
            expected: kernels[2],
            actual: input[3],
        });
    }
    Ok(Geometry {
        n: input[0],
        h: input[1],
        w: input[2],
        cin: input[3],
        cout: kernels[3],
    })
}

/// Unrolls every 3x3xCin patch of one image into a row of `cols`, ordered
/// `(dy, dx, ci)` to match the kernel layout.
fn im2col<T: Element>(g: &Geometry, img: &[T], cols: &mut [T]) {
    let (wo, cin) = (g.wo(), g.cin);
    let run = KERNEL * cin;
    for y in 0..g.ho() {
        for x in 0..wo {
            let row = &mut cols[(y * wo + x) * g.patch_len()..][..g.patch_len()];
            for dy in 0..KERNEL {
                let src = ((y + dy) * g.w + x) * cin;
                row[dy * run..(dy + 1) * run].copy_from_slice(&img[src..src + run]);
            }
        }
    }
}

fn col2im_add<T: Element>(g: &Geometry, cols: &[T], img: &mut [T]) {
    let (wo, cin) = (g.wo(), g.cin);
    let run = KERNEL * cin;
    for y in 0..g.ho() {
        for x in 0..wo {
            let row = &cols[(y * wo + x) * g.patch_len()..][..g.patch_len()];
            for dy in 0..KERNEL {
                let dst = ((y + dy) * g.w + x) * cin;
                img[dst..dst + run]
                    .iter_mut()
                    .zip(&row[dy * run..(dy + 1) * run])
                    .for_each(|(a, &b)| *a = *a + b);
            }
        }
    }
}

/// `out[n,y,x,co] = sum_{dy,dx,ci} input[n,y+dy,x+dx,ci] * kernels[dy,dx,ci,co]`.
pub fn conv2d_valid<T: Element>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), kernels.shape())?;
    let mut out = vec![T::zero(); g.n * g.out_len()];
    let weights = kernels.data();
    out.par_chunks_mut(g.out_len())
        .zip(input.data().par_chunks(g.in_len()))
        .for_each_init(
            || vec![T::zero(); g.patches() * g.patch_len()],
            |cols, (out_img, img)| {
                im2col(&g, img, cols);
                gemm(
                    false,
                    false,
                    g.patches(),
                    g.patch_len(),
                    g.cout,
                    cols,
                    weights,
                    out_img,
                    false,
                );
            },
        );
    Tensor::new(vec![g.n, g.ho(), g.wo(), g.cout], out)
}

struct Conv2dBackward {
    geom: Geometry,
}

impl<T: Element> Backward<T> for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d_valid"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let g = self.geom;
        let (input, kernels) = (inputs[0].data(), inputs[1].data());
        let (gx, gk) = grads.split_at_mut(1);

        if let Some(dx) = gx[0].as_mut() {
            dx.par_chunks_mut(g.in_len())
                .zip(grad_out.par_chunks(g.out_len()))
                .for_each_init(
                    || vec![T::zero(); g.patches() * g.patch_len()],
                    |dcols, (dimg, gimg)| {
                        gemm(
                            false,
                            true,
                            g.patches(),
                            g.cout,
                            g.patch_len(),
                            gimg,
                            kernels,
                            dcols,
                            false,
                        );
                        col2im_add(&g, dcols, dimg);
                    },
                );
        }

        if let Some(dk) = gk[0].as_mut() {
            let partials: Vec<Vec<T>> = input
                .par_chunks(GRAD_CHUNK * g.in_len())
                .zip(grad_out.par_chunks(GRAD_CHUNK * g.out_len()))
                .map(|(imgs, gouts)| {
                    let mut acc = vec![T::zero(); g.patch_len() * g.cout];
                    let mut cols = vec![T::zero(); g.patches() * g.patch_len()];
                    for (img, gimg) in imgs.chunks(g.in_len()).zip(gouts.chunks(g.out_len())) {
                        im2col(&g, img, &mut cols);
                        gemm(
                            true,
                            false,
                            g.patch_len(),
                            g.patches(),
                            g.cout,
                            &cols,
                            gimg,
                            &mut acc,
                            true,
                        );
                    }
                    acc
                })
                .collect();
            for p in partials {
                dk.iter_mut().zip(&p).for_each(|(a, &b)| *a = *a + b);
            }
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn conv2d_valid(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let geom = geometry(self.shape(input), self.shape(kernels))?;
        let out = conv2d_valid(self.value(input), self.value(kernels))?;
        Ok(self.record(&[input, kernels], out, Box::new(Conv2dBackward { geom })))
    }
}
