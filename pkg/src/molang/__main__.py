from molang.cli import main

raise SystemExit(main())
