"""
Instrument-like source classes of the toy corpus
Eleven classes named after the MUSIC categories, fundamentals five semitones
apart so that no two classes sit an octave (or two) from each other
"""

BASE_FUNDAMENTAL_HZ = 82.41  # E2
SEMITONE_STEP = 5


def _fundamental(index: int) -> float:
    return round(BASE_FUNDAMENTAL_HZ * 2.0 ** (SEMITONE_STEP * index / 12.0), 2)


# Ordered by fundamental; the list position is the class id.
INSTRUMENT_CLASSES = [
    {"name": "tuba", "partials": 8, "decay": 0.70, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 0.0, "vibrato_depth": 0.0},
    {"name": "cello", "partials": 10, "decay": 0.75, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 5.5, "vibrato_depth": 0.004},
    {"name": "acoustic_guitar", "partials": 10, "decay": 0.65, "envelope": "plucked", "odd_only": False,
     "vibrato_rate": 0.0, "vibrato_depth": 0.0},
    {"name": "saxophone", "partials": 10, "decay": 0.80, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 5.0, "vibrato_depth": 0.003},
    {"name": "accordion", "partials": 10, "decay": 0.85, "envelope": "tremolo", "odd_only": False,
     "vibrato_rate": 0.0, "vibrato_depth": 0.0},
    {"name": "clarinet", "partials": 8, "decay": 0.70, "envelope": "sustained", "odd_only": True,
     "vibrato_rate": 0.0, "vibrato_depth": 0.0},
    {"name": "trumpet", "partials": 8, "decay": 0.80, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 5.0, "vibrato_depth": 0.003},
    {"name": "erhu", "partials": 6, "decay": 0.70, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 6.0, "vibrato_depth": 0.005},
    {"name": "violin", "partials": 6, "decay": 0.70, "envelope": "sustained", "odd_only": False,
     "vibrato_rate": 6.0, "vibrato_depth": 0.004},
    {"name": "xylophone", "partials": 4, "decay": 0.50, "envelope": "plucked", "odd_only": False,
     "vibrato_rate": 0.0, "vibrato_depth": 0.0},
    {"name": "flute", "partials": 3, "decay": 0.45, "envelope": "tremolo", "odd_only": False,
     "vibrato_rate": 4.5, "vibrato_depth": 0.003},
]

for _index, _entry in enumerate(INSTRUMENT_CLASSES):
    _entry["fundamental"] = _fundamental(_index)

CLASS_NAMES = [entry["name"] for entry in INSTRUMENT_CLASSES]
