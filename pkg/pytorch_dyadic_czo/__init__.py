__version__ = '0.1.0'

from pytorch_dyadic_czo.grid import DyadicCube
from pytorch_dyadic_czo.grid import GoodBadParams
from pytorch_dyadic_czo.grid import ShiftStream
from pytorch_dyadic_czo.field import MatrixField
from pytorch_dyadic_czo.field import HaarCoefficients
from pytorch_dyadic_czo.base_operator import BaseDyadicOperator
from pytorch_dyadic_czo.operators import DyadicShift
from pytorch_dyadic_czo.operators import HaarMultiplier
from pytorch_dyadic_czo.operators import MartingaleTransform
from pytorch_dyadic_czo.operators import Paraproduct
from pytorch_dyadic_czo.operators import PerfectDyadicCZO
from pytorch_dyadic_czo.tensor import HaarTensorOperator
from pytorch_dyadic_czo.kernels import KernelModel
