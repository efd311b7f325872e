import sys

from macdm.main import main

sys.exit(main())
