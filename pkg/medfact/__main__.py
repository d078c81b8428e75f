from medfact.cli import main

raise SystemExit(main())
