"""Convolutional LSTM with peephole connections.

Gate equations (``*`` is a same-padded convolution, ``.`` elementwise)::

    z_t = g(W_z * x_t + R_z * y_{t-1} + b_z)
    i_t = sigmoid(W_i * x_t + R_i * y_{t-1} + p_i * c_{t-1} + b_i)
    f_t = sigmoid(W_f * x_t + R_f * y_{t-1} + p_f * c_{t-1} + b_f)
    c_t = z_t . i_t + c_{t-1} . f_t
    o_t = sigmoid(W_o * x_t + R_o * y_{t-1} + p_o . c_t + b_o)
    y_t = h(c_t) . o_t

The input and forget gates' peepholes on the previous cell are convolutions,
the output gate's peephole is a per-channel elementwise weight. ``peephole``
can switch to all-elementwise or remove peepholes entirely.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from windfault.errors import InvalidArgument

ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu, "identity": lambda x: x}
PEEPHOLES = ("conv", "elementwise", "none")


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels, filters, kernel=(1, 5), activation="tanh",
                 peephole="conv"):
        super().__init__()
        kernel = tuple(kernel)
        if len(kernel) != 2 or any(k < 1 or k % 2 == 0 for k in kernel):
            raise InvalidArgument(f"kernel must be two odd sizes, got {kernel}")
        if filters < 1 or in_channels < 1:
            raise InvalidArgument("channels and filters must be positive")
        if activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {activation!r}")
        if peephole not in PEEPHOLES:
            raise InvalidArgument(f"peephole must be one of {PEEPHOLES}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation
        self.peephole = peephole
        self.padding = (kernel[0] // 2, kernel[1] // 2)
        # W (input) and R (recurrent) kernels for gates z, i, f, o stacked on the
        # output axis; one bias per gate
        self.input_conv = nn.Conv2d(in_channels, 4 * filters, kernel, padding=self.padding)
        self.recurrent_conv = nn.Conv2d(filters, 4 * filters, kernel, padding=self.padding,
                                        bias=False)
        if peephole == "conv":
            self.peep_if = nn.Conv2d(filters, 2 * filters, kernel, padding=self.padding,
                                     bias=False)
        elif peephole == "elementwise":
            self.peep_if = nn.Parameter(torch.empty(2, filters, 1, 1))
        if peephole != "none":
            self.peep_o = nn.Parameter(torch.empty(1, filters, 1, 1))
        self.reset_parameters()

    def reset_parameters(self):
        # fan-in-scaled uniform on every weight, zero biases
        for conv in (self.input_conv, self.recurrent_conv):
            bound = 1.0 / math.sqrt(conv.in_channels * self.kernel[0] * self.kernel[1])
            nn.init.uniform_(conv.weight, -bound, bound)
        nn.init.zeros_(self.input_conv.bias)
        bound = 1.0 / math.sqrt(self.filters)
        if self.peephole == "conv":
            nn.init.uniform_(self.peep_if.weight, -bound, bound)
        elif self.peephole == "elementwise":
            nn.init.uniform_(self.peep_if, -bound, bound)
        if self.peephole != "none":
            nn.init.uniform_(self.peep_o, -bound, bound)

    def init_state(self, x):
        b, _, h, w = x.shape
        zeros = x.new_zeros(b, self.filters, h, w)
        return zeros, zeros.clone()

    def forward(self, x, state, input_part=None):
        """One time step. ``input_part`` may carry a precomputed ``W * x_t``."""
        y_prev, c_prev = state
        g = ACTIVATIONS[self.activation]
        if input_part is None:
            input_part = self.input_conv(x)
        pre = input_part + self.recurrent_conv(y_prev)
        zp, ip, fp, op = pre.chunk(4, dim=1)
        if self.peephole == "conv":
            pi, pf = self.peep_if(c_prev).chunk(2, dim=1)
            ip, fp = ip + pi, fp + pf
        elif self.peephole == "elementwise":
            ip = ip + self.peep_if[0] * c_prev
            fp = fp + self.peep_if[1] * c_prev
        z = g(zp)
        i = torch.sigmoid(ip)
        f = torch.sigmoid(fp)
        c = z * i + c_prev * f
        if self.peephole != "none":
            op = op + self.peep_o * c
        o = torch.sigmoid(op)
        y = g(c) * o
        return y, c


class ConvLSTM(nn.Module):
    """One ConvLSTM layer unrolled over a (B, T, C, H, W) sequence."""

    def __init__(self, in_channels, filters, kernel=(1, 5), activation="tanh",
                 peephole="conv", return_sequences=True):
        super().__init__()
        self.cell = ConvLSTMCell(in_channels, filters, kernel, activation, peephole)
        self.return_sequences = return_sequences

    def forward(self, seq, state=None):
        if seq.dim() != 5 or seq.shape[1] < 1:
            raise InvalidArgument(f"expected (B, T, C, H, W) with T >= 1, got {tuple(seq.shape)}")
        if seq.shape[2] != self.cell.in_channels:
            raise InvalidArgument(
                f"layer expects {self.cell.in_channels} channels, got {seq.shape[2]}")
        if state is None:
            state = self.cell.init_state(seq[:, 0])
        b, steps = seq.shape[:2]
        # the input convolution has no recurrence, so run it over all steps at once
        wx = self.cell.input_conv(seq.flatten(0, 1))
        wx = wx.reshape(b, steps, *wx.shape[1:])
        outputs = []
        for t in range(steps):
            state = self.cell(None, state, wx[:, t])
            outputs.append(state[0])
        out = torch.stack(outputs, dim=1) if self.return_sequences else outputs[-1]
        return out, state


def convlstm_forward(layer: ConvLSTM, input_sequence, initial_state=None):
    """Full output sequence and final (y, c) regardless of ``return_sequences``."""
    if input_sequence.dim() != 5 or input_sequence.shape[1] < 1:
        raise InvalidArgument("input sequence must be (B, T, C, H, W) and non-empty")
    if initial_state is not None:
        y0, c0 = initial_state
        expect = (input_sequence.shape[0], layer.cell.filters, *input_sequence.shape[-2:])
        if tuple(y0.shape) != expect or tuple(c0.shape) != expect:
            raise InvalidArgument(f"initial state must be {expect}")
    keep = layer.return_sequences
    layer.return_sequences = True
    try:
        return layer(input_sequence, initial_state)
    finally:
        layer.return_sequences = keep
