from __future__ import annotations

NUM_JOINTS = 22
ROT6D_DIM = 6
FRAME_DIM = NUM_JOINTS * ROT6D_DIM

TARGET_FPS = 30.0
MAX_FRAMES = 150
MAX_MASK_LEN = 30

TRANSITION_LABEL = "transition"

# Optimizer and scheduler defaults, shared by both training stages.
ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SCHEDULER_T0 = 20
SCHEDULER_T_MULT = 1
SCHEDULER_ETA_MIN = 7e-5
SCHEDULER_ETA_MAX = 1e-4

TAU_INIT = 0.07
TAU_MIN = 0.01
TAU_MAX = 1.0
RECON_WEIGHT = 10.0

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
MAX_TOKENS = 32

CHECKPOINT_MAGIC = b"MOLN"
CHECKPOINT_VERSION = 1

UNIT_NORM_TOLERANCE = 1e-4

THREADS_ENV = "MOLANG_THREADS"
