import os

import queryseg.compat as compat
import shared


class CompatTest(shared.QuerySegTest):
    def test_makedirs(self):
        tmp_dir = shared.tmp_dir()
        out_dir = os.path.join(tmp_dir, "out", "nested")
        compat.makedirs(out_dir)
        self.assertTrue(os.path.isdir(out_dir))
        os.chmod(out_dir, 0o700)
        # Creating the dir again should be a no-op even though the permissions
        # have changed.
        compat.makedirs(out_dir)

    def test_makedirs_on_a_file(self):
        path = shared.tmp_file()
        with self.assertRaises(OSError):
            compat.makedirs(path)

    def test_module_root_has_version(self):
        self.assertTrue(
            os.path.isfile(os.path.join(compat.MODULE_ROOT, 'VERSION')))
