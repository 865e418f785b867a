
class Constants:
    """List of all constants."""
    # Class labels, in label-index order ---
    GLIOMA = 'glioma'
    HEALTHY = 'healthy'
    MENINGIOMA = 'meningioma'
    PITUITARY = 'pituitary'
    CLASS_NAMES = (GLIOMA, HEALTHY, MENINGIOMA, PITUITARY)
    NUM_CLASSES = 4

    # Splits ---
    TRAIN = 'train'
    VAL = 'val'
    TEST = 'test'
    SPLITS = (TRAIN, VAL, TEST)

    IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg')

    # Model modes and presets ---
    MODE_TRAIN = 'train'
    MODE_EVAL = 'eval'
    PRESET_VIT_B16 = 'vit_b16'
    PRESET_TINY = 'tiny'

    # Sample mixing strategies ---
    MIXUP = 'mixup'
    CUTMIX = 'cutmix'
    NO_MIX = 'none'

    # Test-time augmentation view tags, in view order ---
    VIEW_ORIGINAL = 'original'
    VIEW_HFLIP = 'hflip'
    VIEW_ROT90CW = 'rot90cw'
    VIEW_ROT90CCW = 'rot90ccw'
    VIEW_CONTRAST = 'contrast'
    TTA_VIEWS = (VIEW_ORIGINAL, VIEW_HFLIP, VIEW_ROT90CW, VIEW_ROT90CCW, VIEW_CONTRAST)
    TTA_CONTRAST_FACTOR = 1.10

    CW = 'cw'
    CCW = 'ccw'

    # Random sub-stream purpose tags ---
    STREAM_SPLIT = 'split'
    STREAM_BATCH_ORDER = 'batch-order'
    STREAM_PIXEL = 'pixel-augment'
    STREAM_MIX = 'sample-mix'
    STREAM_DROPOUT = 'dropout'
    STREAM_INIT = 'init'

    # Training stages and stop reasons ---
    STAGE_HEAD = 1
    STAGE_FULL = 2
    STOP_PATIENCE = 'patience exhausted'
    STOP_MAX_EPOCHS = 'max epochs reached'
    STOP_NO_EPOCHS = 'no epochs'

    HEAD_PREFIX = 'head.'

    # Checkpoint container ---
    CHECKPOINT_MAGIC = b'MRIVITCK'
    CHECKPOINT_VERSION = 1
    DEFAULT_DIGEST = 'sha256'

    # Output file names ---
    RAW_CHECKPOINT = 'last_raw.ckpt'
    EMA_CHECKPOINT = 'last_ema.ckpt'
    BEST_CHECKPOINT = 'best_ema.ckpt'
    TRAIN_REPORT_CSV = 'train_report.csv'
    TRAIN_SUMMARY_TXT = 'train_summary.txt'
    METRICS_TXT = 'metrics.txt'
    METRICS_CSV = 'metrics.csv'
    CONFUSION_CSV = 'confusion.csv'
    CONFUSION_NORMALIZED_CSV = 'confusion_normalized.csv'
    PREDICTIONS_CSV = 'predictions.csv'
    ROLLOUT_SUFFIX = '_rollout'
    PANEL_SUFFIX = '_panel'
    SPLIT_SUMMARY_SUFFIX = '_summary'
    MONTAGE_PER_CLASS = 4
    MONTAGE_TILE = 64
    RUN_CONFIG_TXT = 'run_config.txt'

    # CSV columns ---
    COLUMN_PATH = 'relative_path'
    COLUMN_LABEL = 'label'
    COLUMN_SPLIT = 'split'
    COLUMN_PREDICTED = 'predicted'

    # Exit codes ---
    EXIT_OK = 0
    EXIT_USER_ERROR = 1
    EXIT_INTERNAL_ERROR = 2
