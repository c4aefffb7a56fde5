from .adam import AdamState, adam_step
from .model import (
    Conv3x3, Dense, Dropout, Flatten, LayerSpec, MaxPool2x2, Model, ReLU, Softmax,
    build_reference_model, reference_layers,
)
from .ops import (
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, dropout, dropout_mask,
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, scc_loss, softmax,
)
