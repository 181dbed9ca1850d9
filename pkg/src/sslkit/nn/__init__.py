from .checkpoint import (ArchitectureMismatch, CheckpointError, load_weights,
                         save_weights)
from .layers import (BatchNorm, ContractError, Conv2d, Dense, Flatten,
                     NumericError, ReLU, Sequential, Sigmoid)
from .models import (ARCHITECTURES, CNN_GCCFB, MLP_GCC, TSNN_GCCFB,
                     ArchitectureError, build_architecture,
                     expected_parameter_count)
from .optim import Adam, mse_loss
from .training import (TrainConfig, backward, evaluate_loss, predict, train,
                       train_two_stage)
