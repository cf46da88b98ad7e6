use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

/// Storage precision applied to every op output.
///
/// Values are always held as `f64`; in `F32` mode each op result is rounded
/// to the nearest `f32`, which makes training numerics match a 32-bit run
/// while keeping one code path for kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn round(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn round_scalar(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static PRECISION: Cell<Precision> = const { Cell::new(Precision::F64) };
}

pub fn precision() -> Precision {
    PRECISION.with(|p| p.get())
}

/// Sets the thread's precision until the guard is dropped.
pub struct PrecisionGuard(Precision);

impl PrecisionGuard {
    pub fn new(p: Precision) -> Self {
        let prev = PRECISION.with(|c| c.replace(p));
        PrecisionGuard(prev)
    }
}

impl Drop for PrecisionGuard {
    fn drop(&mut self) {
        PRECISION.with(|c| c.set(self.0));
    }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording any graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Receives the output gradient and a per-parent "needs gradient" mask.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Reference-counted n-dimensional array with optional gradient tracking.
///
/// Cloning is cheap and shares storage. Op outputs are immutable; only leaf
/// tensors (parameters) are ever rewritten, and only between graph builds.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &preview)
            .field("requires_grad", &self.0.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::leaf(data, shape.to_vec()))
    }

    pub(crate) fn leaf(data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(false),
            grad: RefCell::new(None),
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape.to_vec())
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(vec![value], vec![])
    }

    pub fn from_slice(data: &[f64]) -> Tensor {
        Self::leaf(data.to_vec(), vec![data.len()])
    }

    /// Builder form of [`Tensor::set_requires_grad`].
    pub fn requires_grad(self) -> Tensor {
        self.0.requires_grad.set(true);
        self
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.0.requires_grad.set(on);
    }

    pub fn is_requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrites the values of a leaf tensor (parameter update, checkpoint load).
    pub fn assign(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "assign",
                lhs: self.0.shape.clone(),
                rhs: vec![data.len()],
            });
        }
        assert!(self.is_leaf(), "assign on a non-leaf tensor");
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Gradient, or zeros if none was accumulated.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A new leaf sharing no graph history with `self`.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.to_vec(), self.0.shape.clone())
    }

    pub(crate) fn from_op(
        op: &'static str,
        mut data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>(), "{op}");
        precision().round(&mut data);
        let track = is_grad_enabled() && parents.iter().any(|p| p.is_requires_grad());
        let grad_fn = track.then(|| GradFn {
            op,
            parents,
            backward,
        });
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(track),
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.is_requires_grad() {
            return Ok(());
        }
        // Parents are always created before children, so descending id order
        // is a valid reverse topological order.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.is_requires_grad() && !seen.contains(&p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in nodes {
            let Some(g) = pending.remove(&node.0.id) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.is_requires_grad()).collect();
                    let grads = (gf.backward)(&g, &needs);
                    debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.op);
                    for ((p, pg), need) in gf.parents.iter().zip(grads).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{} grad size", gf.op);
                        match pending.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(p.0.id, pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}
