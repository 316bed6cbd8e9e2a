import sys

from .escli import main

sys.exit(main())
