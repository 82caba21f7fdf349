from warnings import filterwarnings

from beartype import BeartypeConf
from beartype.claw import beartype_this_package
from beartype.roar import BeartypeDecorHintPep585DeprecationWarning

beartype_this_package(conf=BeartypeConf(is_pep484_tower=True))

filterwarnings("ignore", category=BeartypeDecorHintPep585DeprecationWarning)
